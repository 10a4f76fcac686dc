mod support;

use jecrl::distortion::simulate_embedding;
use jecrl::env::{bank_tensor, preprocess, reward_map, FilterBank};
use jecrl::grid::{Grid, Volume};
use jecrl::jpeg::{build_dct_basis, decompress};
use jecrl::nn::{AdamConfig, AdamState, BnConfig};
use jecrl::policy::{mode_rearrange, phase_split, policy_loss, PolicyNet, PolicyNetConfig, TextureProvider};
use proptest::prelude::*;
use support::{gradient_map_fd_error, small_env, sparse_image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn rearrange_and_phase_split_are_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let (h, w) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let v = Volume::from_vec(h, w, 64, (0..h * w * 64).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let g = mode_rearrange(&v).unwrap();
        assert_eq!(phase_split(&g).unwrap(), v);
        assert_eq!(mode_rearrange(&phase_split(&g).unwrap()).unwrap(), g);
    }
}

#[test]
fn policy_shapes_for_every_provider() {
    let img = sparse_image(32, 32, 75, 1);
    for p in [
        TextureProvider::LearnedUnet,
        TextureProvider::WaveletFixed,
        TextureProvider::MsuFixed,
        TextureProvider::LearnedBlockwise,
    ] {
        let mut cfg = PolicyNetConfig::for_provider(p);
        cfg.dct_width = 8;
        cfg.unet_schedule = vec![4, 4, 8, 8];
        let mut net = PolicyNet::new(cfg).unwrap();
        let q = net.forward(&[img.clone(), img.clone()], true).unwrap();
        assert_eq!(q.len(), 2);
        assert_eq!(q[0].dims(), (32, 32));
        assert!(q[0].iter().all(|&v| v > 0.0 && v < 1.0), "{p}");
        let pol = net.policy(&img).unwrap();
        assert_eq!(pol.dims(), (32, 32));
    }
    let mut net = PolicyNet::new(PolicyNetConfig::default()).unwrap();
    assert!(net.forward(&[sparse_image(24, 24, 75, 1)], true).is_err());
}

#[test]
fn policy_backward_requires_forward() {
    let mut net = PolicyNet::new(PolicyNetConfig::default()).unwrap();
    assert!(net.backward(&[Grid::filled(16, 16, 0.0)]).is_err());
}

#[test]
fn policy_parameter_gradients_match_finite_differences() {
    let imgs = [sparse_image(16, 16, 75, 4), sparse_image(16, 16, 75, 5)];
    let cfg = PolicyNetConfig {
        unet_schedule: vec![2, 3, 4, 4],
        dct_width: 4,
        seed: 9,
        ..PolicyNetConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let weights: Vec<Grid<f64>> = (0..2).map(|_| Grid::from_fn(16, 16, |_, _| rng.gen_range(-1.0..1.0))).collect();
    let objective = |net: &mut PolicyNet| -> f64 {
        let q = net.forward(&imgs, true).unwrap();
        q.iter()
            .zip(&weights)
            .map(|(q, w)| q.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    };
    let mut net = PolicyNet::new(cfg).unwrap();
    objective(&mut net);
    let grads = net.backward(&weights).unwrap();
    let mut checked = 0;
    for (id, g) in grads.iter().step_by(3) {
        for idx in [0, g.len() / 2, g.len() - 1] {
            let h = 1e-5;
            let orig = net.store().value(*id).data()[idx];
            net.store_mut().value_mut(*id).data_mut()[idx] = orig + h;
            let up = objective(&mut net);
            net.store_mut().value_mut(*id).data_mut()[idx] = orig - h;
            let down = objective(&mut net);
            net.store_mut().value_mut(*id).data_mut()[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = g.data()[idx];
            assert!(
                (fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-3),
                "{}[{idx}]: fd {fd} vs {an}",
                net.store().get(*id).name
            );
            checked += 1;
        }
    }
    assert!(checked > 10);
}

#[test]
fn preprocessing_matches_direct_correlation() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let plane = Grid::from_fn(20, 20, |_, _| rng.gen_range(0.0..255.0));
    let bank = build_dct_basis();
    let big = 1e9;
    let v = preprocess(&plane, FilterBank::Dct8, big).unwrap();
    for c in [0usize, 1, 9, 27, 63] {
        let (u, w) = (c / 8, c % 8);
        for i in 0..20 {
            for j in 0..20 {
                let mut s = 0.0;
                for di in 0..8 {
                    for dj in 0..8 {
                        let (y, x) = (i as isize + di as isize - 3, j as isize + dj as isize - 3);
                        if (0..20).contains(&y) && (0..20).contains(&x) {
                            s += bank.get(u, w, di, dj) * plane.get(y as usize, x as usize);
                        }
                    }
                }
                assert!((v.get(i, j, c) - s).abs() < 1e-6);
            }
        }
    }
    let t = preprocess(&plane, FilterBank::Srm30, 8.0).unwrap();
    assert!(t.as_slice().iter().all(|x| (-8.0..=8.0).contains(x)));
}

#[test]
fn gradient_map_matches_dct_domain_finite_differences() {
    let worst = gradient_map_fd_error(20, 30);
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn untrained_env_is_near_chance() {
    let mut env = small_env(FilterBank::Dct8);
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut total = 0.0;
    let pairs = 100;
    for n in 0..pairs / 10 {
        let covers: Vec<_> = (0..10).map(|i| decompress(&sparse_image(32, 32, 75, 1000 + 10 * n + i))).collect();
        let stegos: Vec<_> = covers
            .iter()
            .map(|c| Grid::from_fn(32, 32, |i, j| c.get(i, j) + rng.gen_range(-1.0..1.0)))
            .collect();
        let out = env.forward(&covers, &stegos, true).unwrap();
        for (zc, zs) in out.z_cover.iter().zip(&out.z_stego) {
            assert!((zc[0] + zc[1] - 1.0).abs() < 1e-9 && (zs[0] + zs[1] - 1.0).abs() < 1e-9);
        }
        total += out.loss * 10.0;
    }
    let per_sample = total / (2 * pairs) as f64;
    assert!((per_sample - 0.69).abs() < 0.1, "per-sample loss {per_sample}");
}

#[test]
fn frozen_banks_stay_bit_identical() {
    let cover = decompress(&sparse_image(16, 16, 75, 50));
    let stego = Grid::from_fn(16, 16, |i, j| cover.get(i, j) + if (i + j) % 5 == 0 { 1.0 } else { 0.0 });
    for bank in [FilterBank::Dct8, FilterBank::Dct4, FilterBank::Srm30, FilterBank::Learnable] {
        let mut env = small_env(bank);
        let before = env.bank_weights().clone();
        assert_eq!(before.shape(), bank_tensor(bank).shape());
        let mut adam = AdamState::new(AdamConfig { lr: 1e-2, ..AdamConfig::default() }, env.store());
        for _ in 0..5 {
            env.forward(std::slice::from_ref(&cover), std::slice::from_ref(&stego), true).unwrap();
            let (grads, _) = env.backward().unwrap();
            adam.step(env.store_mut(), &grads).unwrap();
        }
        let same = env.bank_weights().data() == before.data();
        assert_eq!(same, bank != FilterBank::Learnable, "{bank}");
    }
}

#[test]
fn identical_inputs_identical_outputs() {
    let mut env = small_env(FilterBank::Srm30);
    let p = decompress(&sparse_image(16, 16, 90, 60));
    let out = env.forward(&[p.clone(), p.clone()], &[p.clone(), p.clone()], false).unwrap();
    assert_eq!(out.z_cover, out.z_stego);
    assert!(env.forward(&[p.clone()], &[Grid::filled(8, 8, 0.0)], false).is_err());
}

#[test]
fn sampled_stegos_stay_ternary() {
    let cover = sparse_image(32, 32, 75, 70);
    let mut net = PolicyNet::new(PolicyNetConfig { unet_schedule: vec![2, 2, 4, 4], dct_width: 4, ..PolicyNetConfig::default() }).unwrap();
    let pol = net.policy(&cover).unwrap();
    let m = simulate_embedding(&pol, 5);
    let stego = cover.apply_modifications(&m).unwrap();
    for (x, y) in cover.coefficients().iter().zip(stego.coefficients().iter()) {
        assert!((y - x).abs() <= 1);
    }
}

#[test]
fn small_bn_momentum_is_the_default() {
    assert_eq!(BnConfig::default().momentum, 0.99);
}

proptest! {
    #[test]
    fn reward_sign_law(m in -1i8..=1, g in prop_oneof![Just(0.0), -5.0f64..5.0], xi in 1e-3f64..1e8) {
        let r = reward_map(&Grid::filled(1, 1, m), &Grid::filled(1, 1, g), xi).unwrap();
        let r = r.as_slice()[0];
        prop_assert_eq!(r > 0.0, m != 0 && g != 0.0 && (m > 0) == (g > 0.0));
        if m == 0 {
            prop_assert_eq!(r, 0.0);
        }
    }

    #[test]
    fn positive_reward_pushes_probability_up(q in 0.01f64..0.99, r in 0.01f64..10.0, m in prop_oneof![Just(-1i8), Just(1i8)]) {
        let l = policy_loss(&Grid::filled(1, 1, q), &Grid::filled(1, 1, m), &Grid::filled(1, 1, r), 0.0, 1.0, 0.0).unwrap();
        prop_assert!(l.dq.as_slice()[0] < 0.0);
        let l0 = policy_loss(&Grid::filled(1, 1, q), &Grid::filled(1, 1, 0i8), &Grid::filled(1, 1, r), 0.0, 1.0, 0.0).unwrap();
        prop_assert!(l0.dq.as_slice()[0] > 0.0);
    }

    #[test]
    fn capacity_term_pulls_entropy_towards_target(q in 0.02f64..0.6, cap in 0.0f64..6.0) {
        let grid = Grid::filled(2, 2, q);
        let l = policy_loss(&grid, &Grid::filled(2, 2, 0i8), &Grid::filled(2, 2, 0.0), cap, 1.0, 1.0).unwrap();
        let step: Vec<f64> = grid.iter().zip(l.dq.iter()).map(|(q, d)| (q - 1e-4 * d).clamp(1e-6, 0.66)).collect();
        let l2 = policy_loss(&Grid::from_vec(2, 2, step).unwrap(), &Grid::filled(2, 2, 0i8), &Grid::filled(2, 2, 0.0), cap, 1.0, 1.0).unwrap();
        prop_assert!(l2.l_c <= l.l_c + 1e-12);
    }
}
