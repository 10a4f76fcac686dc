use jecrl::distortion::{
    costs_from_policy, payload_entropy, probabilities_from_costs, simulate_embedding, solve_lambda,
    PolicyTensor,
};
use jecrl::Grid;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_costs(seed: u64, h: usize, w: usize) -> Grid<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Grid::from_fn(h, w, |_, _| rng.gen_range(0.01..20.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn entropy_strictly_decreases_in_lambda(seed in any::<u64>()) {
        let costs = random_costs(seed, 8, 16);
        let mut last = f64::INFINITY;
        for step in 0..10 {
            let lambda = 0.05 * (1 << step) as f64;
            let h = payload_entropy(&probabilities_from_costs(&costs, lambda).unwrap());
            prop_assert!(h < last, "λ={lambda} h={h} last={last}");
            last = h;
        }
    }

    #[test]
    fn solver_hits_target(seed in any::<u64>(), frac_idx in 0usize..3) {
        let frac = [0.1, 0.3, 0.5][frac_idx];
        let costs = random_costs(seed, 16, 16);
        let cap = frac * 256.0 * 3f64.log2();
        let lambda = solve_lambda(&costs, cap).unwrap();
        let h = payload_entropy(&probabilities_from_costs(&costs, lambda).unwrap());
        prop_assert!((h - cap).abs() < 1e-3, "h={h} cap={cap}");
    }

    #[test]
    fn cost_probability_inverse(q in 0.01f64..0.66) {
        let g = Grid::filled(1, 1, q);
        let back = probabilities_from_costs(&costs_from_policy(&g), 1.0).unwrap();
        prop_assert!((back.change_probabilities().get(0, 0) - q).abs() < 1e-9);
    }
}

#[test]
fn sampling_passes_chi_square() {
    // df = 2: P(χ² > x) = exp(−x/2), so the α = 0.001 critical value is −2 ln 0.001
    let critical = -2.0 * 0.001f64.ln();
    let q = Grid::from_fn(4, 4, |i, j| 0.02 + 0.04 * (i * 4 + j) as f64);
    let policy = PolicyTensor::from_change_probabilities(&q);
    let draws = 10_000;
    let mut counts = vec![[0u32; 3]; 16];
    for seed in 0..draws {
        let m = simulate_embedding(&policy, seed as u64);
        for (n, &a) in m.iter().enumerate() {
            counts[n][(a + 1) as usize] += 1;
        }
    }
    for (n, c) in counts.iter().enumerate() {
        let p = policy.triples().as_slice()[n];
        let chi2: f64 = (0..3)
            .map(|t| {
                let e = p[t] * draws as f64;
                (c[t] as f64 - e).powi(2) / e
            })
            .sum();
        assert!(chi2 < critical, "coefficient {n}: χ²={chi2}");
    }
}

#[test]
fn fixed_seed_gives_identical_maps() {
    let q = Grid::from_fn(32, 32, |i, j| ((i * 7 + j * 3) % 10) as f64 / 15.0);
    let policy = PolicyTensor::from_change_probabilities(&q);
    assert_eq!(simulate_embedding(&policy, 99), simulate_embedding(&policy, 99));
    assert_ne!(simulate_embedding(&policy, 99), simulate_embedding(&policy, 100));
}

#[test]
fn fixed_point_is_exact() {
    let q = Grid::filled(3, 3, 2.0 / 3.0);
    assert!(costs_from_policy(&q).iter().all(|&r| r == 0.0));
    let p = probabilities_from_costs(&Grid::filled(3, 3, 0.0), 1.0).unwrap();
    assert!(p.change_probabilities().iter().all(|&x| x == 2.0 / 3.0));
}
