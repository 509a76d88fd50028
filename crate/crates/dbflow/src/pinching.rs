//! Approximate pinching by uniformly random phase flips.
//!
//! Conjugating by all `2^L` phase flips and averaging is exactly the
//! dephasing channel; drawing `R` flips i.i.d. uniformly approximates it.
//! The sample-size planner inverts the Hoeffding tail: for off-diagonal
//! sparsity `S`, largest coupling `|J|_max`, target operator-norm error
//! `epsilon` and failure probability `delta`,
//! `R = ceil(S^2 |J|_max^2 eps^-2 ln(2S/delta))`.
//!
//! The natural logarithm is used; the source bound leaves the base
//! unspecified and `ln` is the Hoeffding-native, conservative reading.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::operator::{BitString, Matrix, Operator, OperatorError};

#[derive(Debug, Error)]
pub enum PinchError {
    #[error("sparsity must be >= 1, got {0}")]
    InvalidSparsity(usize),
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("delta must lie in (0, 1), got {0}")]
    InvalidDelta(f64),
    #[error("max coupling must be finite and >= 0, got {0}")]
    InvalidCoupling(f64),
    #[error("flip length {found} does not match register size {expected}")]
    FlipLength { expected: usize, found: usize },
    #[error("sample is empty")]
    EmptySample,
    #[error("trial count must be >= 1")]
    NoTrials,
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Sample count sufficient for `|pinch(J) - approx| <= epsilon` with
/// probability `1 - delta`.
pub fn required_samples(
    sparsity: usize,
    max_coupling: f64,
    epsilon: f64,
    delta: f64,
) -> Result<u64, PinchError> {
    if sparsity < 1 {
        return Err(PinchError::InvalidSparsity(sparsity));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(PinchError::InvalidEpsilon(epsilon));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(PinchError::InvalidDelta(delta));
    }
    if !(max_coupling >= 0.0) || !max_coupling.is_finite() {
        return Err(PinchError::InvalidCoupling(max_coupling));
    }
    let s = sparsity as f64;
    let raw = s * s * max_coupling * max_coupling / (epsilon * epsilon)
        * (2.0 * s / delta).ln();
    Ok((raw.ceil() as u64).max(1))
}

/// Randomized-pinching parameters with the planned sample count.
#[derive(Clone, Debug, Serialize)]
pub struct PinchPlan {
    pub sparsity: usize,
    pub max_coupling: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub samples: u64,
    pub seed: u64,
}

impl PinchPlan {
    pub fn new(
        sparsity: usize,
        max_coupling: f64,
        epsilon: f64,
        delta: f64,
        seed: u64,
    ) -> Result<Self, PinchError> {
        let samples = required_samples(sparsity, max_coupling, epsilon, delta)?;
        Ok(Self { sparsity, max_coupling, epsilon, delta, samples, seed })
    }
}

/// `R` phase flips drawn i.i.d. uniformly over `{0,1}^L`, with replacement.
#[derive(Clone, Debug)]
pub struct FlipSample {
    sites: usize,
    flips: Vec<BitString>,
}

impl FlipSample {
    /// Draw `r` flips from the per-trial stream `(seed, stream)` of a
    /// counter-based generator, so trials are reproducible and independent.
    pub fn draw(sites: usize, r: u64, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let d = 1usize << sites;
        let flips = (0..r)
            .map(|_| BitString::from_index(rng.gen_range(0..d), sites))
            .collect();
        Self { sites, flips }
    }

    /// Every flip exactly once; collapses approximate pinching to the exact
    /// channel.
    pub fn full_enumeration(sites: usize) -> Self {
        Self { sites, flips: BitString::all(sites).collect() }
    }

    pub fn from_flips(sites: usize, flips: Vec<BitString>) -> Result<Self, PinchError> {
        for f in &flips {
            if f.len() != sites {
                return Err(PinchError::FlipLength { expected: sites, found: f.len() });
            }
        }
        if flips.is_empty() {
            return Err(PinchError::EmptySample);
        }
        Ok(Self { sites, flips })
    }

    pub fn len(&self) -> usize {
        self.flips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flips.is_empty()
    }

    pub fn flips(&self) -> &[BitString] {
        &self.flips
    }

    /// Signed balance per XOR mask: `w[m] = (1/R) sum_k (-1)^{|eta_k & m|}`,
    /// computed exactly on integer counts via a Walsh-Hadamard transform.
    fn balance_weights(&self) -> Vec<f64> {
        let d = 1usize << self.sites;
        let mut counts = vec![0i64; d];
        for f in &self.flips {
            counts[f.index()] += 1;
        }
        // In-place WHT over integers keeps the zero/one collapses exact.
        let mut half = 1;
        while half < d {
            let mut start = 0;
            while start < d {
                for i in start..start + half {
                    let (x, y) = (counts[i], counts[i + half]);
                    counts[i] = x + y;
                    counts[i + half] = x - y;
                }
                start += 2 * half;
            }
            half *= 2;
        }
        let r = self.flips.len() as f64;
        counts.into_iter().map(|c| c as f64 / r).collect()
    }
}

/// Mixed-unitary approximation to the dephasing channel:
/// `(1/R) sum_k Z_eta_k J Z_eta_k`.
///
/// Entrywise this multiplies `J[a,b]` by the balance weight of the mask
/// `a XOR b`, so the diagonal is preserved exactly for every sample, and a
/// full enumeration reproduces `pinch(J)` exactly.
pub fn approx_pinch(j: &Operator, flips: &FlipSample) -> Result<Operator, PinchError> {
    let sites = j.num_sites()?;
    if sites != flips.sites {
        return Err(PinchError::FlipLength { expected: sites, found: flips.sites });
    }
    if flips.is_empty() {
        return Err(PinchError::EmptySample);
    }
    let weights = flips.balance_weights();
    let d = j.dim();
    let mut mat = Matrix::zeros((d, d));
    let src = j.matrix();
    for a in 0..d {
        for b in 0..d {
            mat[(a, b)] = src[(a, b)] * weights[a ^ b];
        }
    }
    Ok(Operator::new(mat)?)
}

/// `(1/R) sum_k (-1)^{|eta_k & nu|}`, the balance statistic of a sample
/// against one off-diagonal word; lies in `[-1, 1]`.
pub fn balance_statistic(flips: &FlipSample, nu: &BitString) -> Result<f64, PinchError> {
    if nu.len() != flips.sites {
        return Err(PinchError::FlipLength { expected: flips.sites, found: nu.len() });
    }
    if flips.is_empty() {
        return Err(PinchError::EmptySample);
    }
    let mut acc: i64 = 0;
    for f in &flips.flips {
        let odd = f.overlap_parity(nu)?;
        acc += if odd { -1 } else { 1 };
    }
    Ok(acc as f64 / flips.len() as f64)
}

/// Outcome of a Monte-Carlo validation of a pinch plan.
#[derive(Clone, Debug, Serialize)]
pub struct FailureReport {
    pub trials: u32,
    pub failures: u32,
    pub rate: f64,
}

/// Fraction of independent flip samples for which
/// `|pinch(J) - approx_pinch(J)| > epsilon` in operator norm.
pub fn empirical_failure_rate(
    j: &Operator,
    plan: &PinchPlan,
    trials: u32,
) -> Result<FailureReport, PinchError> {
    if trials == 0 {
        return Err(PinchError::NoTrials);
    }
    let sites = j.num_sites()?;
    let exact = j.pinch();
    let mut failures = 0u32;
    for t in 0..trials {
        let flips = FlipSample::draw(sites, plan.samples, plan.seed, t as u64);
        let approx = approx_pinch(j, &flips)?;
        let err = exact.sub(&approx)?.op_norm();
        if err > plan.epsilon {
            failures += 1;
        }
    }
    Ok(FailureReport {
        trials,
        failures,
        rate: failures as f64 / trials as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::build_tfim;
    use crate::test_support::random_hermitian;
    use proptest::prelude::*;

    #[test]
    fn required_samples_collapses_to_one() {
        // S = 1, |J|max = 1, eps = 1, delta = 2/e: ln(e) = 1.
        let r = required_samples(1, 1.0, 1.0, 2.0 / std::f64::consts::E).unwrap();
        assert_eq!(r, 1);
    }

    #[test]
    fn required_samples_matches_linear_sparsity_formula() {
        // With S = a L the planned count is a^2 L^2 J^2 eps^-2 ln(2 a L / delta).
        let (a, l, j, eps, delta) = (2.0f64, 5.0f64, 1.0f64, 0.25f64, 0.05f64);
        let expected = (a * a * l * l * j * j / (eps * eps) * (2.0 * a * l / delta).ln()).ceil();
        let r = required_samples((a * l) as usize, j, eps, delta).unwrap();
        assert_eq!(r, expected as u64);
    }

    #[test]
    fn required_samples_monotonicity() {
        let base = required_samples(10, 2.0, 0.1, 0.01).unwrap();
        assert!(required_samples(10, 2.0, 0.2, 0.01).unwrap() <= base);
        assert!(required_samples(10, 2.0, 0.1, 0.05).unwrap() <= base);
        assert!(required_samples(20, 2.0, 0.1, 0.01).unwrap() >= base);
        assert!(required_samples(10, 4.0, 0.1, 0.01).unwrap() >= base);
    }

    #[test]
    fn required_samples_validation() {
        assert!(required_samples(0, 1.0, 0.1, 0.1).is_err());
        assert!(required_samples(1, 1.0, 0.0, 0.1).is_err());
        assert!(required_samples(1, 1.0, 0.1, 1.0).is_err());
        assert!(required_samples(1, f64::NAN, 0.1, 0.1).is_err());
    }

    #[test]
    fn diagonal_input_is_fixed_exactly() {
        let h = build_tfim(3, 0.0).unwrap().to_operator();
        let flips = FlipSample::draw(3, 7, 42, 0);
        let out = approx_pinch(&h, &flips).unwrap();
        assert_eq!(out, h);
    }

    #[test]
    fn full_enumeration_collapses_to_pinch() {
        for l in [2usize, 3] {
            let h = random_hermitian(1 << l, 5 + l as u64);
            let flips = FlipSample::full_enumeration(l);
            let out = approx_pinch(h.op(), &flips).unwrap();
            assert_eq!(out, h.op().pinch());
        }
    }

    #[test]
    fn diagonal_preserved_for_any_sample() {
        let h = random_hermitian(8, 31);
        let flips = FlipSample::draw(3, 5, 9, 3);
        let out = approx_pinch(h.op(), &flips).unwrap();
        for i in 0..8 {
            assert_eq!(out.matrix()[(i, i)], h.op().matrix()[(i, i)]);
        }
    }

    #[test]
    fn balance_statistic_edge_cases() {
        let flips = FlipSample::draw(4, 100, 11, 0);
        assert_eq!(balance_statistic(&flips, &BitString::zeros(4)).unwrap(), 1.0);
        let full = FlipSample::full_enumeration(3);
        for nu in BitString::all(3).skip(1) {
            assert_eq!(balance_statistic(&full, &nu).unwrap(), 0.0);
        }
    }

    #[test]
    fn hoeffding_envelope_on_balance_statistic() {
        // Empirical tail over 200 resamples stays within the Hoeffding bound
        // plus 3-sigma binomial slack.
        let (l, r, resamples) = (5usize, 200u64, 200u32);
        let eps = (10f64.ln() / r as f64).sqrt(); // bound = 2/10
        let nu = BitString::parse("10010").unwrap();
        let mut exceed = 0u32;
        for t in 0..resamples {
            let flips = FlipSample::draw(l, r, 77, t as u64);
            if balance_statistic(&flips, &nu).unwrap().abs() > eps {
                exceed += 1;
            }
        }
        let bound = 2.0 * (-(r as f64) * eps * eps).exp();
        let slack = 3.0 * (bound * (1.0 - bound) / resamples as f64).sqrt();
        let rate = exceed as f64 / resamples as f64;
        assert!(rate <= bound + slack, "rate {rate} vs bound {bound} + slack {slack}");
    }

    #[test]
    fn planned_failure_rate_within_delta() {
        let l = 4;
        let h = build_tfim(l, 1.0).unwrap().to_operator();
        let summary = crate::models::sparsity_of(&h, l, None).unwrap();
        let eps = 0.3 * summary.sparsity as f64 * summary.max_coupling;
        let plan = PinchPlan::new(summary.sparsity, summary.max_coupling, eps, 0.05, 123).unwrap();
        let report = empirical_failure_rate(&h, &plan, 100).unwrap();
        assert!(report.rate <= 0.05, "rate {}", report.rate);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn approx_pinch_is_hs_contraction(seed in 0u64..1000, stream in 0u64..8) {
            let h = random_hermitian(8, seed);
            let flips = FlipSample::draw(3, 6, seed, stream);
            let out = approx_pinch(h.op(), &flips).unwrap();
            prop_assert!(out.hs_norm() <= h.op().hs_norm() * (1.0 + 1e-12));
        }

        #[test]
        fn balance_statistic_in_range(seed in 0u64..1000) {
            let flips = FlipSample::draw(4, 13, seed, 0);
            let nu = BitString::from_index((seed % 16) as usize, 4);
            let b = balance_statistic(&flips, &nu).unwrap();
            prop_assert!((-1.0..=1.0).contains(&b));
        }
    }
}
