use std::time::Instant;

use jecrl::config::apply;
use jecrl::trainer::{batch_indices, masked_means, synthetic_cover, TrainConfig, TrainState};

fn main() -> jecrl::Result<()> {
    let mut cfg = TrainConfig::toy();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("key=value");
        apply(&mut cfg, k, v)?;
    }
    let n = cfg.synthetic_images;
    let data: Vec<_> = (0..n as u64).map(|s| synthetic_cover(cfg.image_size, cfg.qf, 1000 + s)).collect::<jecrl::Result<_>>()?;
    let (imgs, masks): (Vec<_>, Vec<_>) = data.into_iter().unzip();
    let iters = cfg.iterations;
    let mut st = TrainState::new(cfg)?;
    let t0 = Instant::now();
    let mut acc = [0.0f64; 6];
    let masks2 = masks.clone();
    st.run(&imgs, iters, |s, r| {
        let t = &r.telemetry;
        let idx = batch_indices(s.config.seed, t.iteration - 1, s.config.batch, masks2.len())?;
        for (bi, &ii) in idx.iter().enumerate() {
            for ((&rv, &m), &nz) in r.rewards[bi].iter().zip(masks2[ii].iter()).zip(r.actions[bi].iter()) {
                let o = if m { 0 } else { 3 };
                acc[o] += rv;
                acc[o + 1] += (nz != 0) as i32 as f64;
                acc[o + 2] += 1.0;
            }
        }
        if t.iteration % 25 == 0 || t.iteration == 1 {
            println!("      noisy r {:+.3e} chg {:.3} | smooth r {:+.3e} chg {:.3}", acc[0] / acc[2], acc[1] / acc[2], acc[3] / acc[5], acc[4] / acc[5]);
            acc = [0.0; 6];
            println!(
                "{:5} {:7.1}s H/C {:.3} l_R {:+.3e} l_C {:.3e} l_E {:.3} acc {:.2} r {:+.2e} lr {:.1e}",
                t.iteration, t0.elapsed().as_secs_f64(), t.entropy / t.capacity, t.l_r, t.l_c, t.l_e, t.env_accuracy, t.mean_reward, s.policy_adam.lr()
            );
        }
        Ok(())
    })?;
    let (mut noisy, mut smooth, mut ratio) = (0.0, 0.0, 0.0);
    for (img, mask) in imgs.iter().zip(&masks) {
        let q = st.policy.forward(std::slice::from_ref(img), false)?;
        let (a, b) = masked_means(&q[0], mask);
        noisy += a / n as f64;
        smooth += b / n as f64;
        let h: f64 = q[0].iter().map(|&v| jecrl::policy::entropy_of_q(v)).sum();
        ratio += h / st.config.payload.resolve(img) / n as f64;
    }
    println!("deploy: noisy {noisy:.4} smooth {smooth:.4} H/C {ratio:.4}");
    Ok(())
}
