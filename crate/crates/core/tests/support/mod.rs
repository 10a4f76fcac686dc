#![allow(dead_code)]
//! Oracles shared by the integration tests and the acceptance run.

use jecrl::distortion::WET_COST;
use jecrl::env::{EnvNet, EnvNetConfig, FilterBank};
use jecrl::jpeg::{build_dct_basis, decompress, JpegImage, QuantTable};
use jecrl::nn::{BnConfig, LayerSpec, ParamStore, Sequential, Tape, Tensor, Var};
use jecrl::Grid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Build = dyn Fn(&mut Tape, &ParamStore, Var) -> Var;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4], avoid: &[f64]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f64 = rng.gen_range(-2.0..2.0);
            if avoid.iter().all(|k| (v - k).abs() > 0.05) {
                break v;
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn loss(store: &ParamStore, input: &Tensor, weights: &Tensor, f: &Build) -> f64 {
    let mut tape = Tape::new();
    let x = tape.input(input.clone(), true).unwrap();
    let y = f(&mut tape, store, x);
    tape.value(y).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric
        .iter()
        .chain(analytic)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-6);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}

/// Compares analytic input and parameter gradients with central differences.
pub fn gradcheck(rng: &mut ChaCha8Rng, store: &mut ParamStore, input: Tensor, f: &Build) -> f64 {
    let mut tape = Tape::new();
    let x = tape.input(input.clone(), true).unwrap();
    let y = f(&mut tape, store, x);
    let weights = random_tensor(rng, tape.value(y).shape(), &[]);
    let grads = tape.backward(y, weights.clone()).unwrap();
    let probe = |len: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        if len <= 24 {
            (0..len).collect()
        } else {
            (0..24).map(|_| rng.gen_range(0..len)).collect()
        }
    };
    let mut worst = 0.0f64;

    let dx = grads.get(x).unwrap().data().to_vec();
    let idx = probe(input.len(), rng);
    let mut num = Vec::new();
    for &i in &idx {
        let h = 1e-4 * input.data()[i].abs().max(1.0);
        let mut plus = input.clone();
        plus.data_mut()[i] += h;
        let mut minus = input.clone();
        minus.data_mut()[i] -= h;
        num.push((loss(store, &plus, &weights, f) - loss(store, &minus, &weights, f)) / (2.0 * h));
    }
    let ana: Vec<f64> = idx.iter().map(|&i| dx[i]).collect();
    worst = worst.max(rel_error(&ana, &num));

    for (id, g) in tape.param_grads(&grads) {
        let idx = probe(g.len(), rng);
        let mut num = Vec::new();
        for &i in &idx {
            let orig = store.value(id).data()[i];
            let h = 1e-4 * orig.abs().max(1.0);
            store.value_mut(id).data_mut()[i] = orig + h;
            let lp = loss(store, &input, &weights, f);
            store.value_mut(id).data_mut()[i] = orig - h;
            let lm = loss(store, &input, &weights, f);
            store.value_mut(id).data_mut()[i] = orig;
            num.push((lp - lm) / (2.0 * h));
        }
        let ana: Vec<f64> = idx.iter().map(|&i| g.data()[i]).collect();
        worst = worst.max(rel_error(&ana, &num));
    }
    worst
}

/// Worst relative error over 50 random configurations of one layer stack.
pub fn check_sequential(kind: &str, make: impl Fn(&mut ChaCha8Rng) -> ([usize; 4], Vec<LayerSpec>, bool), avoid: &[f64]) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(kind.len() as u64 * 7919);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (shape, specs, train) = make(&mut rng);
        let mut store = ParamStore::new();
        let net = Sequential::build("net", shape[3], &specs, BnConfig::default(), &mut store, &mut rng).unwrap();
        // move eval-mode statistics away from the identity
        for id in store.ids().collect::<Vec<_>>() {
            if store.get(id).name.ends_with("running_var") {
                store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = 1.7);
            }
            if store.get(id).name.ends_with("running_mean") || store.get(id).name.ends_with("beta") {
                store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.3);
            }
        }
        let input = random_tensor(&mut rng, shape, avoid);
        let f = move |t: &mut Tape, s: &ParamStore, x: Var| net.forward(t, s, x, train).unwrap();
        worst = worst.max(gradcheck(&mut rng, &mut store, input, &f));
    }
    worst
}

pub const LAYER_KINDS: &[&str] = &[
    "conv", "deconv", "batchnorm", "relu", "leaky_relu", "sigmoid", "tlu", "avgpool", "global_avg", "fully_connected",
    "softmax", "concat", "cross_entropy",
];

/// Worst central-difference relative error of one layer kind over 50 random
/// configurations.
pub fn layer_check(kind: &str) -> f64 {
    let act = |spec: LayerSpec, avoid: &[f64]| {
        check_sequential(kind, |rng| {
            let shape = [rng.gen_range(1..=2), rng.gen_range(1..=5), rng.gen_range(1..=5), rng.gen_range(1..=3)];
            (shape, vec![spec], true)
        }, avoid)
    };
    match kind {
        "conv" => check_sequential(kind, |rng| {
            let k = rng.gen_range(1..=5);
            let s = rng.gen_range(1..=2);
            let cin = [1, 2, 3, 8, 10][rng.gen_range(0..5)];
            let cout = rng.gen_range(1..=3);
            let shape = [rng.gen_range(1..=2), rng.gen_range(3..=9), rng.gen_range(3..=9), cin];
            (shape, vec![LayerSpec::conv(k, cin, cout, s)], true)
        }, &[]),
        "deconv" => check_sequential(kind, |rng| {
            let k = rng.gen_range(2..=4);
            let s = rng.gen_range(1..=2);
            let (cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let shape = [rng.gen_range(1..=2), rng.gen_range(2..=5), rng.gen_range(2..=5), cin];
            (shape, vec![LayerSpec::deconv(k, cin, cout, s)], true)
        }, &[]),
        "batchnorm" => check_sequential(kind, |rng| {
            let c = rng.gen_range(1..=4);
            let shape = [rng.gen_range(1..=3), rng.gen_range(2..=5), rng.gen_range(2..=5), c];
            (shape, vec![LayerSpec::BatchNorm { channels: c }], rng.gen_bool(0.5))
        }, &[]),
        "relu" => act(LayerSpec::Relu, &[0.0]),
        "leaky_relu" => act(LayerSpec::LeakyRelu(0.2), &[0.0]),
        "sigmoid" => act(LayerSpec::Sigmoid, &[]),
        "tlu" => act(LayerSpec::Tlu(1.0), &[-1.0, 1.0]),
        "avgpool" => check_sequential(kind, |rng| {
            let shape = [rng.gen_range(1..=2), rng.gen_range(2..=9), rng.gen_range(2..=9), rng.gen_range(1..=3)];
            let size = rng.gen_range(1..=5);
            (shape, vec![LayerSpec::AvgPool { size, stride: rng.gen_range(1..=2) }], true)
        }, &[]),
        "global_avg" => check_sequential(kind, |rng| {
            let shape = [rng.gen_range(1..=3), rng.gen_range(1..=6), rng.gen_range(1..=6), rng.gen_range(1..=3)];
            (shape, vec![LayerSpec::GlobalAvgPool], true)
        }, &[]),
        "fully_connected" => check_sequential(kind, |rng| {
            let shape = [rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3)];
            let fin = shape[1] * shape[2] * shape[3];
            (shape, vec![LayerSpec::FullyConnected { fin, fout: rng.gen_range(1..=4) }], true)
        }, &[]),
        "softmax" => check_sequential(kind, |rng| {
            let shape = [rng.gen_range(1..=3), 1, 1, rng.gen_range(2..=5)];
            (shape, vec![LayerSpec::Softmax], true)
        }, &[]),
        "concat" => {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut worst = 0.0f64;
            for _ in 0..50 {
                let (h, w) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
                let (ca, cb) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
                let mut store = ParamStore::new();
                let net = Sequential::build("side", ca, &[LayerSpec::conv(1, ca, cb, 1)], BnConfig::default(), &mut store, &mut rng).unwrap();
                let input = random_tensor(&mut rng, [2, h, w, ca], &[]);
                let f = move |t: &mut Tape, s: &ParamStore, x: Var| {
                    let side = net.forward(t, s, x, true).unwrap();
                    t.concat(x, side).unwrap()
                };
                worst = worst.max(gradcheck(&mut rng, &mut store, input, &f));
            }
            worst
        }
        "cross_entropy" => {
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let mut worst = 0.0f64;
            for _ in 0..50 {
                let n = rng.gen_range(1..=4);
                let c = rng.gen_range(2..=4);
                let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
                let scale = rng.gen_range(0.1..2.0);
                let input = random_tensor(&mut rng, [n, 1, 1, c], &[]);
                let f = move |t: &mut Tape, _: &ParamStore, x: Var| t.softmax_cross_entropy(x, &labels, scale).unwrap();
                worst = worst.max(gradcheck(&mut rng, &mut ParamStore::new(), input, &f));
            }
            worst
        }
        _ => panic!("unknown layer kind {kind}"),
    }
}

/// Random coefficients with a plausible magnitude profile over modes.
pub fn sparse_image(h: usize, w: usize, qf: u32, seed: u64) -> JpegImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = JpegImage::zeros(h, w, QuantTable::from_quality(qf).unwrap()).unwrap();
    for a in 0..h / 8 {
        for b in 0..w / 8 {
            for k in 0..8 {
                for l in 0..8 {
                    let v = if k + l == 0 {
                        rng.gen_range(-40..40)
                    } else if k + l < 5 {
                        rng.gen_range(-6..=6)
                    } else {
                        rng.gen_range(-1..=1)
                    };
                    img.set_coef(a, b, k, l, v);
                }
            }
        }
    }
    img
}

pub fn small_env(bank: FilterBank) -> EnvNet {
    EnvNet::new(EnvNetConfig {
        filter_bank: bank,
        widths: vec![4, 4, 6, 6, 8],
        ..EnvNetConfig::default()
    })
    .unwrap()
}

fn pair_loss(env: &mut EnvNet, cover: &Grid<f64>, stego: &Grid<f64>) -> f64 {
    env.forward(std::slice::from_ref(cover), std::slice::from_ref(stego), true).unwrap().loss
}

/// Worst relative error of the environment's coefficient gradient map
/// against central differences taken along DCT basis directions, over
/// `count` random coefficients.
pub fn gradient_map_fd_error(count: usize, seed: u64) -> f64 {
    let cover = sparse_image(32, 32, 75, seed);
    let m = Grid::from_fn(32, 32, |i, j| [0i8, 1, -1][(i * 7 + j * 3) % 3]);
    let stego = cover.apply_modifications(&m).unwrap();
    let (xc, ys) = (decompress(&cover), decompress(&stego));
    let mut env = small_env(FilterBank::Dct8);
    env.forward(std::slice::from_ref(&xc), std::slice::from_ref(&ys), true).unwrap();
    let (_, maps) = env.gradient_maps(std::slice::from_ref(&stego)).unwrap();
    let g = &maps[0];
    let bank = build_dct_basis();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let (i, j) = (rng.gen_range(0..32), rng.gen_range(0..32));
        let (a, b, k, l) = (i / 8, j / 8, i % 8, j % 8);
        let s = stego.table().step(k, l) as f64;
        let h = 1e-4;
        let bump = |sign: f64| {
            let mut p = ys.clone();
            for di in 0..8 {
                for dj in 0..8 {
                    *p.get_mut(8 * a + di, 8 * b + dj) += sign * h * s * bank.get(k, l, di, dj);
                }
            }
            p
        };
        let fd = (pair_loss(&mut env, &xc, &bump(1.0)) - pair_loss(&mut env, &xc, &bump(-1.0))) / (2.0 * h);
        let an = *g.get(i, j);
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-12));
    }
    worst
}

/// One-based transcription of the UERD equations.
pub fn uerd_oracle(img: &JpegImage) -> Vec<Vec<f64>> {
    let (h, w) = img.dims();
    let (nb_h, nb_w) = (h / 8, w / 8);
    let s = |k: usize, l: usize| img.table().step(k - 1, l - 1) as f64;
    let x = |a: usize, b: usize, k: usize, l: usize| img.coefficients().get(8 * (a - 1) + k - 1, 8 * (b - 1) + l - 1).abs() as f64;
    let energy = |a: usize, b: usize| {
        let mut e = 0.0;
        for k in 1..=8 {
            for l in 1..=8 {
                e += x(a, b, k, l) * s(k, l);
            }
        }
        e
    };
    let mut out = vec![vec![0.0; w]; h];
    for a in 1..=nb_h {
        for b in 1..=nb_w {
            let mut neigh = 0.0;
            for (da, db) in [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)] {
                let (na, nb) = (a as i64 + da, b as i64 + db);
                if na >= 1 && nb >= 1 && na <= nb_h as i64 && nb <= nb_w as i64 {
                    neigh += energy(na as usize, nb as usize);
                }
            }
            let denom = energy(a, b) + 0.25 * neigh;
            let block = if denom == 0.0 { WET_COST } else { 1.0 / denom };
            for k in 1..=8 {
                for l in 1..=8 {
                    let mode = if k == 1 && l == 1 { 0.5 * (s(2, 1) + s(1, 2)) } else { s(k, l) };
                    out[8 * (a - 1) + k - 1][8 * (b - 1) + l - 1] = block * mode;
                }
            }
        }
    }
    out
}

/// Random coefficients (40% nonzero), optionally with an all-zero first block.
pub fn random_image(seed: u64, h: usize, w: usize, qf: u32, zero_blocks: bool) -> JpegImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coefs: Vec<i32> = (0..h * w)
        .map(|_| if rng.gen_bool(0.4) { rng.gen_range(-6..=6) } else { 0 })
        .collect();
    if zero_blocks {
        for i in 0..8 {
            for j in 0..8 {
                coefs[i * w + j] = 0;
            }
        }
    }
    JpegImage::new(Grid::from_vec(h, w, coefs).unwrap(), QuantTable::from_quality(qf).unwrap()).unwrap()
}
