//! Additive distortion, the optimal ternary embedding simulator and the
//! payload-constrained λ search.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::jpeg::JpegImage;

/// Cost of a coefficient that must not be modified.
pub const WET_COST: f64 = 1e13;

const MAX_BISECTION_STEPS: usize = 200;
const ENTROPY_TOLERANCE: f64 = 1e-3;

/// Lower clamp applied to change probabilities before taking logarithms.
pub const Q_FLOOR: f64 = 1e-6;
/// Upper clamp; `2/3` is the uniform policy and maps to zero cost.
pub const Q_CEIL: f64 = 2.0 / 3.0;

/// Symmetric ternary costs `ρ(±1) = ρ`, `ρ(0) = 0`.
pub type CostMap = Grid<f64>;

/// Ternary modifications in `{-1, 0, +1}`.
pub type ModificationMap = Grid<i8>;

/// Per-coefficient action probabilities `(π(−1), π(0), π(+1))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTensor {
    probs: Grid<[f64; 3]>,
}

impl PolicyTensor {
    /// Builds the symmetric policy from total change probabilities:
    /// `π(±1) = q/2`, `π(0) = 1 − q`.
    pub fn from_change_probabilities(q: &Grid<f64>) -> Self {
        PolicyTensor {
            probs: q.map(|&q| [q / 2.0, 1.0 - q, q / 2.0]),
        }
    }

    pub fn from_triples(probs: Grid<[f64; 3]>) -> Result<Self> {
        for p in probs.iter() {
            let sum: f64 = p.iter().sum();
            if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "invalid probability triple {p:?}"
                )));
            }
        }
        Ok(PolicyTensor { probs })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.probs.dims()
    }

    pub fn triples(&self) -> &Grid<[f64; 3]> {
        &self.probs
    }

    /// `π(m)` at flat position `(i, j)`.
    pub fn prob(&self, i: usize, j: usize, m: i8) -> f64 {
        self.probs.get(i, j)[(m + 1) as usize]
    }

    /// Total change probability `π(+1) + π(−1)` per coefficient.
    pub fn change_probabilities(&self) -> Grid<f64> {
        self.probs.map(|p| p[0] + p[2])
    }
}

/// How a payload is expressed on the command line and in configs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PayloadSpec {
    Bits(f64),
    Bpnzac(f64),
}

impl PayloadSpec {
    /// Target capacity `C` in bits for an image.
    pub fn resolve(&self, image: &JpegImage) -> f64 {
        match *self {
            PayloadSpec::Bits(b) => b,
            PayloadSpec::Bpnzac(r) => r * image.count_nzac() as f64,
        }
    }
}

impl std::str::FromStr for PayloadSpec {
    type Err = Error;

    /// `"<number>bpnzAC"` or `"<number>bits"`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (num, ctor): (&str, fn(f64) -> PayloadSpec) =
            if let Some(n) = s.strip_suffix("bpnzAC").or_else(|| s.strip_suffix("bpnzac")) {
                (n, PayloadSpec::Bpnzac)
            } else if let Some(n) = s.strip_suffix("bits") {
                (n, PayloadSpec::Bits)
            } else {
                return Err(Error::InvalidInput(format!(
                    "payload {s:?} must end in bpnzAC or bits"
                )));
            };
        let value: f64 = num
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad payload number in {s:?}")))?;
        if !(value >= 0.0) || !value.is_finite() {
            return Err(Error::InvalidInput(format!("payload {s:?} must be >= 0")));
        }
        Ok(ctor(value))
    }
}

impl std::fmt::Display for PayloadSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PayloadSpec::Bits(b) => write!(f, "{b}bits"),
            PayloadSpec::Bpnzac(r) => write!(f, "{r}bpnzAC"),
        }
    }
}

/// `D(X, Y) = Σ ρ · 𝟙(y ≠ x)`.
pub fn additive_distortion(cover: &JpegImage, stego: &JpegImage, costs: &CostMap) -> Result<f64> {
    cover.coefficients().same_dims(stego.coefficients(), "stego")?;
    cover.coefficients().same_dims(costs, "cost map")?;
    let mut total = 0.0;
    for ((&x, &y), &rho) in cover
        .coefficients()
        .iter()
        .zip(stego.coefficients().iter())
        .zip(costs.iter())
    {
        match y - x {
            0 => {}
            1 | -1 => total += rho,
            m => {
                return Err(Error::InvalidInput(format!(
                    "modification {m} outside the ternary set"
                )))
            }
        }
    }
    Ok(total)
}

/// Change probability for one side, `e^{−λρ} / (1 + 2e^{−λρ})`.
#[inline]
fn side_probability(rho: f64, lambda: f64) -> f64 {
    if rho >= WET_COST / 2.0 {
        return 0.0;
    }
    let e = (-lambda * rho).exp();
    e / (1.0 + 2.0 * e)
}

/// Ternary entropy in bits of `(p, 1 − 2p, p)`, with `0·log 0 = 0`.
#[inline]
pub fn ternary_entropy(p: f64) -> f64 {
    let mut h = 0.0;
    if p > 0.0 {
        h -= 2.0 * p * p.log2();
    }
    let p0 = 1.0 - 2.0 * p;
    if p0 > 0.0 {
        h -= p0 * p0.log2();
    }
    h
}

/// Gibbs probabilities for symmetric ternary costs at multiplier `λ`.
pub fn probabilities_from_costs(costs: &CostMap, lambda: f64) -> Result<PolicyTensor> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidInput(format!("lambda {lambda} must be >= 0")));
    }
    check_costs(costs)?;
    Ok(PolicyTensor {
        probs: costs.map(|&rho| {
            let p = side_probability(rho, lambda);
            [p, 1.0 - 2.0 * p, p]
        }),
    })
}

fn check_costs(costs: &CostMap) -> Result<()> {
    if let Some(bad) = costs.iter().find(|&&r| !(r >= 0.0)) {
        return Err(Error::InvalidInput(format!("cost {bad} is not >= 0")));
    }
    Ok(())
}

fn entropy_at(costs: &CostMap, lambda: f64) -> f64 {
    costs
        .iter()
        .map(|&rho| ternary_entropy(side_probability(rho, lambda)))
        .sum()
}

/// Total ternary entropy `−Σ Σ_m π(m) log₂ π(m)`.
pub fn payload_entropy(policy: &PolicyTensor) -> f64 {
    policy
        .probs
        .iter()
        .map(|p| {
            p.iter()
                .filter(|&&x| x > 0.0)
                .map(|&x| -x * x.log2())
                .sum::<f64>()
        })
        .sum()
}

/// Finds `λ` such that the entropy of [`probabilities_from_costs`] equals the
/// target capacity within `1e-3` bits.
///
/// The search brackets `[0, 1]`, doubles the upper end until the entropy
/// drops below the target, then bisects.
pub fn solve_lambda(costs: &CostMap, capacity: f64) -> Result<f64> {
    check_costs(costs)?;
    let max_entropy = entropy_at(costs, 0.0);
    if !(capacity > 0.0) || capacity > max_entropy + ENTROPY_TOLERANCE {
        return Err(Error::InfeasiblePayload(format!(
            "capacity {capacity} bits outside (0, {max_entropy}]"
        )));
    }
    if max_entropy - capacity < ENTROPY_TOLERANCE {
        return Ok(0.0);
    }
    let free = costs.iter().filter(|&&c| c == 0.0).count() as f64 * 3f64.log2();
    if free > capacity {
        return Err(Error::InfeasiblePayload(format!(
            "{free} bits carried by zero-cost coefficients exceed capacity {capacity}"
        )));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut steps = 0;
    while entropy_at(costs, hi) >= capacity {
        lo = hi;
        hi *= 2.0;
        steps += 1;
        if steps > MAX_BISECTION_STEPS || !hi.is_finite() {
            return Err(Error::NonConvergence(
                "could not bracket lambda".into(),
            ));
        }
    }
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let h = entropy_at(costs, mid);
        if (h - capacity).abs() < ENTROPY_TOLERANCE * 0.1 || mid == lo || mid == hi {
            if (h - capacity).abs() < ENTROPY_TOLERANCE {
                return Ok(mid);
            }
            break;
        }
        if h > capacity {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NonConvergence(format!(
        "lambda bisection did not reach {capacity} bits"
    )))
}

/// Draws one action per coefficient from its triple; deterministic per seed.
pub fn simulate_embedding(policy: &PolicyTensor, seed: u64) -> ModificationMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(policy, &mut rng)
}

pub(crate) fn sample_with<R: Rng>(policy: &PolicyTensor, rng: &mut R) -> ModificationMap {
    policy.probs.map(|p| {
        let u: f64 = rng.gen();
        if u < p[2] {
            1
        } else if u < p[2] + p[0] {
            -1
        } else {
            0
        }
    })
}

/// `ρ = ln(2/q − 2)` with `q` clamped to `[1e-6, 2/3]`.
pub fn costs_from_policy(q: &Grid<f64>) -> CostMap {
    q.map(|&q| cost_from_change_probability(q))
}

#[inline]
pub fn cost_from_change_probability(q: f64) -> f64 {
    if !(q < Q_CEIL) {
        // also catches NaN
        return 0.0;
    }
    let q = q.max(Q_FLOOR);
    (2.0 / q - 2.0).ln().max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jpeg::QuantTable;

    fn image(coefs: Vec<i32>) -> JpegImage {
        JpegImage::new(Grid::from_vec(8, 8, coefs).unwrap(), QuantTable::unit()).unwrap()
    }

    #[test]
    fn distortion_sums_changed_costs() {
        let x = image(vec![0; 64]);
        let costs = Grid::from_fn(8, 8, |i, j| match (i, j) {
            (0, 1) => 1.0,
            (3, 3) => 2.0,
            (7, 0) => 0.25,
            (5, 5) => 3.5,
            _ => 9.0,
        });
        assert_eq!(additive_distortion(&x, &x, &costs).unwrap(), 0.0);

        let mut y = x.clone();
        y.set_coef(0, 0, 5, 5, -1);
        assert_eq!(additive_distortion(&x, &y, &costs).unwrap(), 3.5);

        let mut y = x.clone();
        y.set_coef(0, 0, 0, 1, 1);
        y.set_coef(0, 0, 3, 3, -1);
        y.set_coef(0, 0, 7, 0, 1);
        assert_eq!(additive_distortion(&x, &y, &costs).unwrap(), 3.25);

        y.set_coef(0, 0, 7, 0, 2);
        assert!(additive_distortion(&x, &y, &costs).is_err());
    }

    #[test]
    fn gibbs_probabilities() {
        let zero = Grid::filled(2, 2, 0.0);
        let p = probabilities_from_costs(&zero, 5.0).unwrap();
        assert!(p.triples().iter().all(|t| t.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15)));

        let ones = Grid::filled(2, 2, 7.0);
        let p = probabilities_from_costs(&ones, 0.0).unwrap();
        assert!(p.triples().iter().all(|t| t.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15)));

        let p = probabilities_from_costs(&Grid::filled(1, 1, 1.0), 1.0).unwrap();
        assert!((p.prob(0, 0, 1) - 0.211_941_557_617_085_44).abs() < 1e-15);
        assert_eq!(p.prob(0, 0, 1), p.prob(0, 0, -1));

        assert!(probabilities_from_costs(&ones, -1.0).is_err());
    }

    #[test]
    fn wet_costs_never_change() {
        let p = probabilities_from_costs(&Grid::filled(1, 1, WET_COST), 1e-20).unwrap();
        assert_eq!(p.prob(0, 0, 1), 0.0);
        assert_eq!(p.prob(0, 0, 0), 1.0);
    }

    #[test]
    fn entropy_examples() {
        let uniform = probabilities_from_costs(&Grid::filled(3, 5, 0.0), 1.0).unwrap();
        assert!((payload_entropy(&uniform) - 15.0 * 3f64.log2()).abs() < 1e-12);
        let still = PolicyTensor::from_change_probabilities(&Grid::filled(4, 4, 0.0));
        assert_eq!(payload_entropy(&still), 0.0);
        let one = PolicyTensor::from_triples(Grid::filled(1, 1, [0.25, 0.5, 0.25])).unwrap();
        assert!((payload_entropy(&one) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn lambda_at_max_entropy_is_zero() {
        let costs = Grid::from_fn(8, 8, |i, j| (i * 8 + j) as f64 * 0.1);
        let cap = 64.0 * 3f64.log2();
        assert_eq!(solve_lambda(&costs, cap).unwrap(), 0.0);
        assert!(matches!(
            solve_lambda(&costs, cap + 1.0),
            Err(Error::InfeasiblePayload(_))
        ));
        assert!(matches!(solve_lambda(&costs, 0.0), Err(Error::InfeasiblePayload(_))));
    }

    #[test]
    fn lambda_matches_scalar_oracle() {
        // independent oracle: bisection on the closed-form per-coefficient entropy
        fn h(lambda: f64) -> f64 {
            let e = (-lambda).exp();
            let p = e / (1.0 + 2.0 * e);
            -2.0 * p * p.log2() - (1.0 - 2.0 * p) * (1.0 - 2.0 * p).log2()
        }
        let (mut lo, mut hi) = (0.0f64, 50.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(mid) > 0.5 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let n = 400;
        let costs = Grid::filled(20, 20, 1.0);
        let lambda = solve_lambda(&costs, 0.5 * n as f64).unwrap();
        // the solver stops within 1e-3 bits; dH/dλ ≈ −1 bit per unit λ per coefficient here
        assert!((lambda - lo).abs() < 1e-3, "{lambda} vs {lo}");
        let p = probabilities_from_costs(&costs, lambda).unwrap();
        assert!((payload_entropy(&p) - 200.0).abs() < 1e-3);
    }

    #[test]
    fn tiny_capacity_gives_large_lambda() {
        let costs = Grid::from_fn(8, 8, |i, j| 1.0 + (i + j) as f64);
        let lambda = solve_lambda(&costs, 1e-5).unwrap();
        let p = probabilities_from_costs(&costs, lambda).unwrap();
        assert!(p.triples().iter().all(|t| t[2] < 1e-6));
        assert!(lambda > 5.0);
    }

    #[test]
    fn sampling_edge_cases() {
        let still = PolicyTensor::from_change_probabilities(&Grid::filled(10, 10, 0.0));
        assert!(simulate_embedding(&still, 3).iter().all(|&m| m == 0));

        let half = PolicyTensor::from_change_probabilities(&Grid::filled(100, 100, 0.5));
        let a = simulate_embedding(&half, 11);
        let b = simulate_embedding(&half, 11);
        assert_eq!(a, b);
        let changed = a.iter().filter(|&&m| m != 0).count() as f64;
        // binomial(10000, 0.5): σ = 50
        assert!((changed - 5000.0).abs() < 150.0, "{changed}");
    }

    #[test]
    fn cost_conversion_examples() {
        assert_eq!(cost_from_change_probability(2.0 / 3.0), 0.0);
        assert!((cost_from_change_probability(0.5) - 2f64.ln()).abs() < 1e-15);
        assert!(cost_from_change_probability(0.0).is_finite());
        assert_eq!(cost_from_change_probability(0.9), 0.0);
    }

    #[test]
    fn cost_round_trip_at_unit_lambda() {
        let q = Grid::from_fn(1, 66, |_, j| 0.01 * (j + 1) as f64);
        let p = probabilities_from_costs(&costs_from_policy(&q), 1.0).unwrap();
        for (a, b) in p.change_probabilities().iter().zip(q.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn payload_grammar() {
        assert_eq!("0.4bpnzAC".parse::<PayloadSpec>().unwrap(), PayloadSpec::Bpnzac(0.4));
        assert_eq!("1200bits".parse::<PayloadSpec>().unwrap(), PayloadSpec::Bits(1200.0));
        assert!("0.4".parse::<PayloadSpec>().is_err());
        assert!("-1bits".parse::<PayloadSpec>().is_err());
    }
}
