//! Ground-truth ADE for the simulation designs.

use serde::{Deserialize, Serialize};

use crate::data::OutcomeType;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, STREAM_TRUTH};
use crate::sim::{draw_latent, draw_outcome, latent_score, outcome_derivative, DgpCoefficients, DgpSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthEstimate {
    pub value: f64,
    /// Monte Carlo standard error; zero for analytic values.
    pub se: f64,
    pub n_mc: usize,
}

/// `η + 0.5·Σ η_AX` for continuous outcomes (the derivative does not depend
/// on A or U and `E[X] = ½`). `None` for binary outcomes.
pub fn analytic_truth(spec: &DgpSpec, coefs: &DgpCoefficients) -> Option<f64> {
    match spec.outcome {
        OutcomeType::Continuous => Some(spec.eta + 0.5 * coefs.eta_ax.iter().sum::<f64>()),
        OutcomeType::Binary => None,
    }
}

fn mean_and_se(sum: f64, sum_sq: f64, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let m = sum / nf;
    let var = (sum_sq / nf - m * m).max(0.0);
    let se = if n > 1 { (var * nf / (nf - 1.0) / nf).sqrt() } else { f64::NAN };
    (m, se)
}

/// Monte Carlo average of `∂ₐE[Y | A, X, U]` over draws of (X, U, A).
pub fn ground_truth_ade(
    spec: &DgpSpec,
    coefs: &DgpCoefficients,
    n_mc: usize,
    seed: u64,
) -> Result<TruthEstimate> {
    if n_mc == 0 {
        return Err(Error::config("n_mc must be >= 1"));
    }
    let mut rng = stream_rng(seed, STREAM_TRUTH);
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n_mc {
        let d = draw_latent(spec, coefs, &mut rng);
        let v = outcome_derivative(spec, coefs, &d);
        s += v;
        s2 += v * v;
    }
    let (value, se) = mean_and_se(s, s2, n_mc);
    Ok(TruthEstimate { value, se, n_mc })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    /// `E[∂ₐE[Y|A,X,U]]`, analytic when available.
    pub derivative_mean: f64,
    /// Monte Carlo `E[−s(A|X,U)·Y]`.
    pub score_mean: f64,
    /// Standard error of the difference.
    pub se: f64,
    pub z: f64,
    pub pass: bool,
}

/// Checks that the average derivative equals `E[−s(A|X,U)·Y]` on the full
/// latent model. For continuous outcomes the derivative side is analytic;
/// otherwise both sides come from the same draws and the SE is that of the
/// paired difference. Passes when the gap is within `max_z` SEs.
pub fn score_identity_check(
    spec: &DgpSpec,
    coefs: &DgpCoefficients,
    n_mc: usize,
    seed: u64,
    max_z: f64,
) -> Result<IdentityReport> {
    if n_mc < 2 {
        return Err(Error::config("n_mc must be >= 2"));
    }
    let mut rng = stream_rng(seed, STREAM_TRUTH);
    let analytic = analytic_truth(spec, coefs);
    let (mut sd, mut sd2, mut ss, mut ss2, mut sdiff, mut sdiff2) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for _ in 0..n_mc {
        let d = draw_latent(spec, coefs, &mut rng);
        let y = draw_outcome(spec, coefs, &d, &mut rng);
        let sy = -latent_score(spec, coefs, &d) * y;
        let der = outcome_derivative(spec, coefs, &d);
        sd += der;
        sd2 += der * der;
        ss += sy;
        ss2 += sy * sy;
        let diff = sy - der;
        sdiff += diff;
        sdiff2 += diff * diff;
    }
    let (score_mean, score_se) = mean_and_se(ss, ss2, n_mc);
    let (derivative_mean, se) = match analytic {
        Some(v) => (v, score_se),
        None => {
            let (dm, _) = mean_and_se(sd, sd2, n_mc);
            let (_, diff_se) = mean_and_se(sdiff, sdiff2, n_mc);
            (dm, diff_se)
        }
    };
    let z = (score_mean - derivative_mean) / se;
    Ok(IdentityReport {
        derivative_mean,
        score_mean,
        se,
        z,
        pass: z.abs() <= max_z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{DoseFamily, DIM};

    fn spec(outcome: OutcomeType) -> DgpSpec {
        DgpSpec::new(DoseFamily::Gaussian, outcome, 2.0)
    }

    #[test]
    fn constant_derivative() {
        let coefs = DgpCoefficients::zeros();
        let t = ground_truth_ade(&spec(OutcomeType::Continuous), &coefs, 1000, 1).unwrap();
        assert_eq!(t.value, 1.0);
        assert_eq!(analytic_truth(&spec(OutcomeType::Continuous), &coefs), Some(1.0));
    }

    #[test]
    fn interaction_truth() {
        let mut coefs = DgpCoefficients::zeros();
        coefs.eta_ax[0] = 0.5;
        let s = spec(OutcomeType::Continuous);
        assert_eq!(analytic_truth(&s, &coefs), Some(1.25));
        let t = ground_truth_ade(&s, &coefs, 200_000, 3).unwrap();
        assert!((t.value - 1.25).abs() < 3.0 * t.se, "{t:?}");
    }

    #[test]
    fn probit_truth_agrees_with_larger_run() {
        let s = spec(OutcomeType::Binary);
        let mut coefs = DgpCoefficients::zeros();
        coefs.beta = vec![-0.5; DIM];
        let small = ground_truth_ade(&s, &coefs, 50_000, 7).unwrap();
        let big = ground_truth_ade(&s, &coefs, 500_000, 8).unwrap();
        let se = (small.se.powi(2) + big.se.powi(2)).sqrt();
        assert!((small.value - big.value).abs() < 3.0 * se);
        assert!(analytic_truth(&s, &coefs).is_none());
    }

    #[test]
    fn identity_holds_for_both_doses() {
        let mut rng = stream_rng(99, 0);
        let coefs = DgpCoefficients::draw(&mut rng);
        for dose in [DoseFamily::Gaussian, DoseFamily::Gamma] {
            for outcome in [OutcomeType::Continuous, OutcomeType::Binary] {
                let s = DgpSpec::new(dose, outcome, 2.0);
                let r = score_identity_check(&s, &coefs, 200_000, 5, 4.0).unwrap();
                assert!(r.pass, "{dose} {outcome}: {r:?}");
            }
        }
    }

    #[test]
    fn wrong_score_is_detected() {
        // the score misses the U shift when zeta is misreported
        let coefs = DgpCoefficients::zeros();
        let mut s = spec(OutcomeType::Continuous);
        s.delta = 4.0;
        let r = score_identity_check(&s, &coefs, 200_000, 5, 4.0).unwrap();
        assert!(r.pass);
        // E[−s·Y] without U in the score differs by ζ·δ·Var(U)
        let mut rng = stream_rng(5, STREAM_TRUTH);
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let d = draw_latent(&s, &coefs, &mut rng);
            let y = draw_outcome(&s, &coefs, &d, &mut rng);
            acc += d.a * y;
        }
        assert!((acc / n as f64 - r.derivative_mean).abs() > 0.3);
    }
}
