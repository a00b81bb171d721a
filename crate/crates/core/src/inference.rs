//! Cross-fitted influence-function estimation of the bounds, pointwise and
//! simultaneous confidence limits, and crossing points.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bounds::{correction_continuous, lse_h, lse_h_prime, CorrectionKind, WeightFn};
use crate::data::{make_folds, Dataset, GammaGrid, OutcomeType, RunConfig};
use crate::error::{Error, Result};
use crate::nuisance::{BasisLearner, NuisanceFit, NuisanceLearner};

/// Standard normal quantile.
pub fn z_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Per-sample uncentered influence-function values for the base term `a`
/// and the correction term `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct EifDecomposition {
    pub base_if: Vec<f64>,
    pub corr_if: Vec<f64>,
    pub kind: CorrectionKind,
    pub t: f64,
}

impl EifDecomposition {
    pub fn new(base_if: Vec<f64>, corr_if: Vec<f64>, kind: CorrectionKind, t: f64) -> Result<Self> {
        if base_if.len() != corr_if.len() {
            return Err(Error::Internal("influence vectors differ in length".into()));
        }
        if base_if.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if kind == CorrectionKind::BinaryLse && !(t > 0.0) {
            return Err(Error::config("lse_t must be > 0"));
        }
        Ok(Self {
            base_if,
            corr_if,
            kind,
            t,
        })
    }

    pub fn len(&self) -> usize {
        self.base_if.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base_if.is_empty()
    }

    /// Additive allowance for the soft-minimum approximation: `ln 2 / t` for
    /// binary outcomes, zero otherwise.
    pub fn lse_shift(&self) -> f64 {
        match self.kind {
            CorrectionKind::ContinuousMedian => 0.0,
            CorrectionKind::BinaryLse => std::f64::consts::LN_2 / self.t,
        }
    }

    fn moments(&self) -> Moments {
        let n = self.len() as f64;
        let a = mean(&self.base_if);
        let b = mean(&self.corr_if);
        let mut vaa = 0.0;
        let mut vbb = 0.0;
        let mut vab = 0.0;
        for (x, y) in self.base_if.iter().zip(&self.corr_if) {
            let dx = x - a;
            let dy = y - b;
            vaa += dx * dx;
            vbb += dy * dy;
            vab += dx * dy;
        }
        Moments {
            n,
            a,
            b,
            var_a: vaa / n,
            var_b: vbb / n,
            cov_ab: vab / n,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Moments {
    n: f64,
    a: f64,
    b: f64,
    var_a: f64,
    var_b: f64,
    cov_ab: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Plug-in variance `(1/n) Σ (vᵢ − v̄)²`.
fn centered_variance(v: &[f64], center: f64) -> f64 {
    v.iter().map(|x| (x - center).powi(2)).sum::<f64>() / v.len() as f64
}

/// Per-sample influence values using each sample's out-of-fold nuisance fit.
///
/// With a weight `w`, the base term becomes `w·μ̂' − (w' + w·ŝ)(y − μ̂)` and
/// the correction is multiplied by `w`.
pub fn eif_terms(
    data: &Dataset,
    fits: &[NuisanceFit],
    folds: &[usize],
    t: f64,
    weight: Option<&dyn WeightFn>,
) -> Result<EifDecomposition> {
    if folds.len() != data.len() {
        return Err(Error::Internal(format!(
            "fold assignment has {} entries for {} samples",
            folds.len(),
            data.len()
        )));
    }
    let kind = CorrectionKind::from(data.outcome_type());
    let mut base_if = Vec::with_capacity(data.len());
    let mut corr_if = Vec::with_capacity(data.len());
    for (s, &k) in data.samples().iter().zip(folds) {
        let fit = fits
            .get(k)
            .ok_or_else(|| Error::Internal(format!("no nuisance fit for fold {k}")))?;
        if fit.outcome_type() != data.outcome_type() {
            return Err(Error::Internal("nuisance fit outcome type mismatch".into()));
        }
        let (a, x, y) = (s.a, s.x.as_slice(), s.y);
        let mu = fit.predict_mu(a, x);
        let mu_prime = fit.predict_mu_prime(a, x);
        let score = fit.predict_score(a, x);
        let corr = match data.outcome_type() {
            OutcomeType::Continuous => {
                let m = fit.predict_median(a, x)?;
                // (y − M)(1{y > M} − 1{y < M}) = |y − M|
                correction_continuous(y - m, 0.0)
            }
            OutcomeType::Binary => lse_h(mu, t) + lse_h_prime(mu, t) * (y - mu),
        };
        let (base, corr) = match weight {
            None => (mu_prime - score * (y - mu), corr),
            Some(wf) => {
                let w = wf.w(a, x);
                if !(w >= 0.0) {
                    return Err(Error::domain(format!("weight must be >= 0, got {w}")));
                }
                let wp = wf.w_prime(a, x);
                (w * mu_prime - (wp + w * score) * (y - mu), w * corr)
            }
        };
        base_if.push(base);
        corr_if.push(corr);
    }
    EifDecomposition::new(base_if, corr_if, kind, t)
}

/// Point estimates, variances and one-sided confidence limits at one γ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimate {
    pub gamma: f64,
    pub psi_min_hat: f64,
    pub psi_max_hat: f64,
    pub var_min: f64,
    pub var_max: f64,
    /// One-sided lower confidence limit for ψ_min.
    pub ci_lower: f64,
    /// One-sided upper confidence limit for ψ_max.
    pub ci_upper: f64,
    pub lse_correction_applied: f64,
}

pub fn estimate_bounds(eif: &EifDecomposition, gamma: f64, alpha: f64) -> Result<BoundEstimate> {
    if !(gamma >= 0.0) {
        return Err(Error::domain(format!("gamma must be >= 0, got {gamma}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config("alpha must lie in (0, 1)"));
    }
    let n = eif.len();
    if n < 2 {
        return Err(Error::domain("variance is undefined for fewer than 2 samples"));
    }
    let phi_max: Vec<f64> = eif
        .base_if
        .iter()
        .zip(&eif.corr_if)
        .map(|(a, b)| a + gamma * b)
        .collect();
    let phi_min: Vec<f64> = eif
        .base_if
        .iter()
        .zip(&eif.corr_if)
        .map(|(a, b)| a - gamma * b)
        .collect();
    let psi_max_hat = mean(&phi_max);
    let psi_min_hat = mean(&phi_min);
    let var_max = centered_variance(&phi_max, psi_max_hat);
    let var_min = centered_variance(&phi_min, psi_min_hat);
    let z = z_quantile(1.0 - alpha);
    let shift = eif.lse_shift();
    let nf = n as f64;
    Ok(BoundEstimate {
        gamma,
        psi_min_hat,
        psi_max_hat,
        var_min,
        var_max,
        ci_lower: psi_min_hat - z * (var_min / nf).sqrt() - shift,
        ci_upper: psi_max_hat + z * (var_max / nf).sqrt() + shift,
        lse_correction_applied: shift,
    })
}

/// Reference crossings of the point estimate, the pointwise limit and the
/// simultaneous band. `None` means the curve never reaches the reference.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Crossings {
    pub point: Option<f64>,
    pub pointwise: Option<f64>,
    pub simultaneous: Option<f64>,
}

/// Bound estimates over a γ grid plus the simultaneous band `a ± γb`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityCurve {
    pub alpha: f64,
    pub t: f64,
    pub kind: CorrectionKind,
    pub n: usize,
    pub estimates: Vec<BoundEstimate>,
    pub a_hat: f64,
    pub b_hat: f64,
    pub se_a: f64,
    pub se_b: f64,
    pub cov_ab: f64,
    /// Two-sided (1 − α/2) interval for `a`.
    pub a_lower: f64,
    pub a_upper: f64,
    /// One-sided (1 − α/2) upper limit for `b`.
    pub b_upper: f64,
    pub lse_shift: f64,
    pub reference: f64,
    pub crossings: Crossings,
}

impl SensitivityCurve {
    pub fn simultaneous_lower(&self, gamma: f64) -> f64 {
        self.a_lower - gamma * self.b_upper - self.lse_shift
    }

    pub fn simultaneous_upper(&self, gamma: f64) -> f64 {
        self.a_upper + gamma * self.b_upper + self.lse_shift
    }

    fn z_pointwise(&self) -> f64 {
        z_quantile(1.0 - self.alpha)
    }

    /// Pointwise lower limit at any γ from the stored moments.
    pub fn pointwise_lower(&self, gamma: f64) -> f64 {
        let q = self.variance_along(gamma, -1.0);
        self.a_hat - gamma * self.b_hat - self.z_pointwise() * q.sqrt() - self.lse_shift
    }

    /// Pointwise upper limit at any γ from the stored moments.
    pub fn pointwise_upper(&self, gamma: f64) -> f64 {
        let q = self.variance_along(gamma, 1.0);
        self.a_hat + gamma * self.b_hat + self.z_pointwise() * q.sqrt() + self.lse_shift
    }

    /// Variance of the mean of `base ± γ·corr`, i.e. `(Va ± 2γC + γ²Vb)/n`.
    fn variance_along(&self, gamma: f64, sign: f64) -> f64 {
        let va = self.se_a * self.se_a;
        let vb = self.se_b * self.se_b;
        (va + sign * 2.0 * gamma * self.cov_ab + gamma * gamma * vb).max(0.0)
    }

    pub fn to_json(&self) -> CurveJson {
        CurveJson {
            alpha: self.alpha,
            t: self.t,
            grid: self
                .estimates
                .iter()
                .map(|e| GridRow {
                    gamma: e.gamma,
                    psi_min: e.psi_min_hat,
                    psi_max: e.psi_max_hat,
                    ci_lower: e.ci_lower,
                    ci_upper: e.ci_upper,
                    sim_lower: self.simultaneous_lower(e.gamma),
                    sim_upper: self.simultaneous_upper(e.gamma),
                })
                .collect(),
            a_hat: self.a_hat,
            b_hat: self.b_hat,
            se_a: self.se_a,
            se_b: self.se_b,
            crossings: self.crossings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub gamma: f64,
    pub psi_min: f64,
    pub psi_max: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub sim_lower: f64,
    pub sim_upper: f64,
}

/// Wire format of a sensitivity curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveJson {
    pub alpha: f64,
    pub t: f64,
    pub grid: Vec<GridRow>,
    pub a_hat: f64,
    pub b_hat: f64,
    pub se_a: f64,
    pub se_b: f64,
    pub crossings: Crossings,
}

/// Smallest γ ≥ 0 with `d − γ·b = z·sqrt((va + 2γ·c + γ²·vb))`, where the
/// left side starts positive. Solved by squaring; only roots with
/// `d − γ·b ≥ 0` are admissible.
fn first_crossing(d: f64, b: f64, z: f64, va: f64, c: f64, vb: f64) -> Option<f64> {
    let g = |gamma: f64| d - gamma * b - z * (va + 2.0 * gamma * c + gamma * gamma * vb).max(0.0).sqrt();
    if g(0.0) <= 0.0 {
        return Some(0.0);
    }
    if b <= 0.0 {
        return None;
    }
    let z2 = z * z;
    let qa = b * b - z2 * vb;
    let qb = -2.0 * d * b - 2.0 * z2 * c;
    let qc = d * d - z2 * va;
    let upper = d / b;
    let mut roots = Vec::with_capacity(2);
    if qa.abs() <= 1e-14 * (b * b + z2 * vb) {
        if qb != 0.0 {
            roots.push(-qc / qb);
        }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            // numerically stable pair
            let q = -0.5 * (qb + qb.signum() * sq);
            if q != 0.0 {
                roots.push(q / qa);
                roots.push(qc / q);
            }
        }
    }
    let tol = 1e-9 * (1.0 + upper.abs());
    roots
        .into_iter()
        .filter(|&r| r.is_finite() && r >= 0.0 && r <= upper + tol)
        .filter(|&r| g(r).abs() <= 1e-9 * (1.0 + d.abs()))
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |m| m.min(r))))
        .or(Some(upper))
}

/// Builds the curve over `grid` and the crossings of `reference`.
pub fn sensitivity_curve(
    eif: &EifDecomposition,
    grid: &GammaGrid,
    alpha: f64,
    reference: f64,
) -> Result<SensitivityCurve> {
    let estimates = grid
        .points()
        .into_iter()
        .map(|g| estimate_bounds(eif, g, alpha))
        .collect::<Result<Vec<_>>>()?;
    let m = eif.moments();
    let se_a = (m.var_a / m.n).sqrt();
    let se_b = (m.var_b / m.n).sqrt();
    let cov = m.cov_ab / m.n;
    let z_a = z_quantile(1.0 - alpha / 4.0);
    let z_b = z_quantile(1.0 - alpha / 2.0);
    let z_point = z_quantile(1.0 - alpha);
    let shift = eif.lse_shift();

    let a_lower = m.a - z_a * se_a;
    let a_upper = m.a + z_a * se_a;
    let b_upper = m.b + z_b * se_b;

    let crossings = if m.b <= 0.0 {
        Crossings::default()
    } else if m.a >= reference {
        // lower arms move down toward the reference
        let d_point = m.a - reference;
        let d_ci = m.a - reference - shift;
        let d_sim = a_lower - reference - shift;
        Crossings {
            point: Some(d_point / m.b),
            pointwise: first_crossing(d_ci, m.b, z_point, se_a * se_a, -cov, se_b * se_b),
            simultaneous: Some((d_sim / b_upper).max(0.0)),
        }
    } else {
        let d_point = reference - m.a;
        let d_ci = reference - m.a - shift;
        let d_sim = reference - a_upper - shift;
        Crossings {
            point: Some(d_point / m.b),
            pointwise: first_crossing(d_ci, m.b, z_point, se_a * se_a, cov, se_b * se_b),
            simultaneous: Some((d_sim / b_upper).max(0.0)),
        }
    };

    Ok(SensitivityCurve {
        alpha,
        t: eif.t,
        kind: eif.kind,
        n: eif.len(),
        estimates,
        a_hat: m.a,
        b_hat: m.b,
        se_a,
        se_b,
        cov_ab: cov,
        a_lower,
        a_upper,
        b_upper,
        lse_shift: shift,
        reference,
        crossings,
    })
}

/// Cross-fitted nuisances and influence values for a dataset.
pub fn cross_fit(
    dataset: &Dataset,
    config: &RunConfig,
    learner: &dyn NuisanceLearner,
    weight: Option<&dyn WeightFn>,
) -> Result<EifDecomposition> {
    config.validate()?;
    if dataset.outcome_type() != config.outcome_type {
        return Err(Error::config(format!(
            "dataset outcome type {} does not match configured {}",
            dataset.outcome_type(),
            config.outcome_type
        )));
    }
    let folds = make_folds(dataset.len(), config.folds, config.seed)?;
    let fits = (0..config.folds)
        .into_par_iter()
        .map(|k| {
            let train_idx: Vec<usize> = (0..dataset.len()).filter(|&i| folds[i] != k).collect();
            let train = dataset.select(&train_idx)?;
            learner.fit(&train, config)
        })
        .collect::<Result<Vec<_>>>()?;
    eif_terms(dataset, &fits, &folds, config.lse_t, weight)
}

/// Full pipeline with the default learner stack.
pub fn analyze(
    dataset: &Dataset,
    config: &RunConfig,
    grid: &GammaGrid,
    weight: Option<&dyn WeightFn>,
    reference: f64,
) -> Result<SensitivityCurve> {
    analyze_with(dataset, config, grid, weight, reference, &BasisLearner)
}

pub fn analyze_with(
    dataset: &Dataset,
    config: &RunConfig,
    grid: &GammaGrid,
    weight: Option<&dyn WeightFn>,
    reference: f64,
    learner: &dyn NuisanceLearner,
) -> Result<SensitivityCurve> {
    let eif = cross_fit(dataset, config, learner, weight)?;
    sensitivity_curve(&eif, grid, config.alpha, reference)
}
