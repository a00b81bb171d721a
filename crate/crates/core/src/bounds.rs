//! Closed-form bound functionals and the LogSumExp soft minimum.
//!
//! Under the marginal γ model the worst-case ADE bounds are affine in γ:
//! `ψ = base ± γ·correction`, where `base = E[−s(A|X)Y]` and the correction
//! is `E[Y·sgn(Y − M(A,X))]` for continuous outcomes or
//! `E[min(p, 1 − p)]` for binary outcomes (`p = P(Y = 1 | A, X)`). The binary
//! correction is estimated through the smooth surrogate [`lse_h`].

use crate::data::{ObservedSample, OutcomeType};
use crate::error::{Error, Result};
use crate::nuisance::NuisanceFit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionKind {
    ContinuousMedian,
    BinaryLse,
}

impl From<OutcomeType> for CorrectionKind {
    fn from(o: OutcomeType) -> Self {
        match o {
            OutcomeType::Continuous => CorrectionKind::ContinuousMedian,
            OutcomeType::Binary => CorrectionKind::BinaryLse,
        }
    }
}

/// The multiplier of γ in the affine bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionTerm {
    pub value: f64,
    pub kind: CorrectionKind,
}

/// `−(1/t)·log(e^{−tp} + e^{−t(1−p)})`, evaluated with max-subtraction.
pub fn lse_h(p: f64, t: f64) -> f64 {
    let u = -t * p;
    let v = -t * (1.0 - p);
    let (hi, lo) = if u >= v { (u, v) } else { (v, u) };
    -(hi + (lo - hi).exp().ln_1p()) / t
}

/// Derivative of [`lse_h`] in `p`; equals `tanh(t(1 − 2p)/2)`.
pub fn lse_h_prime(p: f64, t: f64) -> f64 {
    let u = -t * p;
    let v = -t * (1.0 - p);
    let m = u.max(v);
    let eu = (u - m).exp();
    let ev = (v - m).exp();
    (eu - ev) / (eu + ev)
}

/// `(ψ_min, ψ_max) = (base − γ·correction, base + γ·correction)`.
pub fn plugin_bounds_continuous(base: f64, correction: f64, gamma: f64) -> Result<(f64, f64)> {
    if !(gamma >= 0.0) {
        return Err(Error::domain(format!("gamma must be >= 0, got {gamma}")));
    }
    if !(correction >= 0.0) {
        return Err(Error::domain(format!(
            "continuous correction must be >= 0, got {correction}"
        )));
    }
    Ok((base - gamma * correction, base + gamma * correction))
}

/// `y·sgn(y − m)`, with ties contributing zero.
pub fn correction_continuous(y: f64, m: f64) -> f64 {
    if y > m {
        y
    } else if y < m {
        -y
    } else {
        0.0
    }
}

/// `min(p, 1 − p)`.
pub fn correction_binary_exact(p: f64) -> f64 {
    p.min(1.0 - p)
}

/// Nonnegative weight with known exposure derivative.
pub trait WeightFn: Send + Sync {
    fn w(&self, a: f64, x: &[f64]) -> f64;
    fn w_prime(&self, a: f64, x: &[f64]) -> f64;
}

/// Weight built from a pair of closures.
pub struct FnWeight<W, D> {
    pub w: W,
    pub w_prime: D,
}

impl<W, D> WeightFn for FnWeight<W, D>
where
    W: Fn(f64, &[f64]) -> f64 + Send + Sync,
    D: Fn(f64, &[f64]) -> f64 + Send + Sync,
{
    fn w(&self, a: f64, x: &[f64]) -> f64 {
        (self.w)(a, x)
    }

    fn w_prime(&self, a: f64, x: &[f64]) -> f64 {
        (self.w_prime)(a, x)
    }
}

/// The unit weight `w ≡ 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnitWeight;

impl WeightFn for UnitWeight {
    fn w(&self, _a: f64, _x: &[f64]) -> f64 {
        1.0
    }

    fn w_prime(&self, _a: f64, _x: &[f64]) -> f64 {
        0.0
    }
}

/// Plug-in per-sample contributions to the weighted bounds:
/// base `−w'·y − w·ŝ·y` and correction `w × (continuous or smoothed binary correction)`.
pub fn weighted_base_and_correction(
    sample: &ObservedSample,
    fit: &NuisanceFit,
    weight: &dyn WeightFn,
    t: f64,
) -> Result<(f64, f64)> {
    let (a, x, y) = (sample.a, sample.x.as_slice(), sample.y);
    let w = weight.w(a, x);
    if !(w >= 0.0) {
        return Err(Error::domain(format!("weight must be >= 0, got {w} at a = {a}")));
    }
    let base = -weight.w_prime(a, x) * y - w * fit.predict_score(a, x) * y;
    let corr = match fit.outcome_type() {
        OutcomeType::Continuous => correction_continuous(y, fit.predict_median(a, x)?),
        OutcomeType::Binary => lse_h(fit.predict_mu(a, x), t),
    };
    Ok((base, w * corr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn lse_symmetric_point() {
        let v = lse_h(0.5, 50.0);
        assert!((v - (0.5 - LN_2 / 50.0)).abs() < 1e-15);
        assert!((v - 0.486_137_1).abs() < 1e-7);
    }

    #[test]
    fn lse_at_zero() {
        let expected = -(-50.0f64).exp().ln_1p() / 50.0;
        let v = lse_h(0.0, 50.0);
        assert!((v - expected).abs() < 1e-30);
        assert!((v + 3.86e-24).abs() < 0.01e-24);
    }

    #[test]
    fn lse_sandwich_grid() {
        for t in [1.0, 10.0, 50.0, 500.0] {
            for i in 0..=1000 {
                let p = i as f64 / 1000.0;
                let m = p.min(1.0 - p);
                let h = lse_h(p, t);
                assert!(h <= m + 1e-15, "p={p} t={t}");
                assert!(h >= m - LN_2 / t - 1e-15, "p={p} t={t}");
            }
        }
    }

    #[test]
    fn lse_prime_values() {
        assert_eq!(lse_h_prime(0.5, 7.0), 0.0);
        assert!((lse_h_prime(0.0, 50.0) - 25.0f64.tanh()).abs() < 1e-12);
        for i in 1..100 {
            let p = i as f64 / 100.0;
            let t = 10.0;
            assert!((lse_h_prime(p, t) - (t * (1.0 - 2.0 * p) / 2.0).tanh()).abs() < 1e-14);
        }
    }

    #[test]
    fn plugin_examples() {
        assert_eq!(plugin_bounds_continuous(1.0, 0.5, 0.0).unwrap(), (1.0, 1.0));
        assert_eq!(plugin_bounds_continuous(0.0, 1.0, 2.0).unwrap(), (-2.0, 2.0));
        let (lo, _) = plugin_bounds_continuous(0.108, 0.3344, 0.323).unwrap();
        assert!(lo.abs() < 1e-3);
        assert!(plugin_bounds_continuous(0.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn correction_examples() {
        assert_eq!(correction_continuous(3.0, 1.0), 3.0);
        assert_eq!(correction_continuous(-2.0, 0.0), 2.0);
        assert_eq!(correction_continuous(1.0, 1.0), 0.0);
        assert_eq!(correction_binary_exact(0.3), 0.3);
        assert_eq!(correction_binary_exact(0.5), 0.5);
        assert_eq!(correction_binary_exact(1.0), 0.0);
    }
}
