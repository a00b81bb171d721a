//! Latent-confounder construction `f(a|x,u) ∝ η(a,x)·exp(γ_r·a·u)` and
//! numeric checks of what it implies for the observed density.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type LogShape = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Trapezoid settings: `nodes` points on `center ± half_width·scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub nodes: usize,
    pub half_width: f64,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            nodes: 2001,
            half_width: 8.0,
        }
    }
}

const NORMALIZATION_TOL: f64 = 1e-8;
const ODDS_TOL: f64 = 1e-8;
const SCORE_GAP_TOL: f64 = 1e-6;
const IDENTITY_TOL: f64 = 1e-6;
const FD_STEP: f64 = 1e-4;

#[derive(Clone)]
pub struct RosenbaumModel {
    log_eta: LogShape,
    /// Location and scale of η, used only to place the quadrature grid.
    eta_center: f64,
    eta_scale: f64,
    gamma_r: f64,
    u_values: Vec<f64>,
    u_probs: Vec<f64>,
    quadrature: Quadrature,
    /// Multiplies ζ(x,u) by `1 + normalizer_error·u`. Zero for a valid model.
    normalizer_error: f64,
}

impl std::fmt::Debug for RosenbaumModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RosenbaumModel")
            .field("gamma_r", &self.gamma_r)
            .field("u_values", &self.u_values)
            .field("u_probs", &self.u_probs)
            .field("normalizer_error", &self.normalizer_error)
            .finish()
    }
}

impl RosenbaumModel {
    pub fn new(
        log_eta: LogShape,
        eta_center: f64,
        eta_scale: f64,
        gamma_r: f64,
        u_values: Vec<f64>,
        u_probs: Vec<f64>,
    ) -> Result<Self> {
        if !(gamma_r >= 0.0) || !gamma_r.is_finite() {
            return Err(Error::domain(format!("gamma_r must be >= 0, got {gamma_r}")));
        }
        if u_values.is_empty() || u_values.len() != u_probs.len() {
            return Err(Error::domain("u values and probabilities must be non-empty and aligned"));
        }
        if u_values.iter().any(|u| !(0.0..=1.0).contains(u)) {
            return Err(Error::domain("u values must lie in [0, 1]"));
        }
        if u_probs.iter().any(|p| !(*p > 0.0)) || (u_probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::domain("u probabilities must be positive and sum to 1"));
        }
        if !(eta_scale > 0.0) {
            return Err(Error::domain("eta scale must be positive"));
        }
        Ok(Self {
            log_eta,
            eta_center,
            eta_scale,
            gamma_r,
            u_values,
            u_probs,
            quadrature: Quadrature::default(),
            normalizer_error: 0.0,
        })
    }

    /// η = standard normal shape, `u ∈ {0, 0.5, 1}` with equal weights.
    pub fn standard_normal(gamma_r: f64) -> Result<Self> {
        Self::new(
            Arc::new(|a: f64, _x: &[f64]| -0.5 * a * a),
            0.0,
            1.0,
            gamma_r,
            vec![0.0, 0.5, 1.0],
            vec![1.0 / 3.0; 3],
        )
    }

    pub fn with_quadrature(mut self, q: Quadrature) -> Self {
        self.quadrature = q;
        self
    }

    /// Negative control: scale the normalizer of stratum `u` by `1 + err·u`.
    pub fn mis_normalized(mut self, err: f64) -> Self {
        self.normalizer_error = err;
        self
    }

    pub fn gamma_r(&self) -> f64 {
        self.gamma_r
    }

    pub fn u_values(&self) -> &[f64] {
        &self.u_values
    }

    fn grid(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let _ = x;
        let n = self.quadrature.nodes.max(3);
        let half = self.quadrature.half_width * self.eta_scale;
        // cover the tilted strata too
        let lo = self.eta_center - half;
        let hi = self.eta_center + half + self.gamma_r * self.eta_scale * self.eta_scale;
        let h = (hi - lo) / (n - 1) as f64;
        ((0..n).map(|i| lo + h * i as f64).collect(), h)
    }

    fn trapezoid(values: &[f64], h: f64) -> f64 {
        let n = values.len();
        let inner: f64 = values[1..n - 1].iter().sum();
        h * (inner + 0.5 * (values[0] + values[n - 1]))
    }

    fn log_unnormalized(&self, a: f64, x: &[f64], u: f64) -> f64 {
        (self.log_eta)(a, x) + self.gamma_r * a * u
    }

    /// `log ζ(x,u)` for every u, by quadrature (including any deliberate error).
    pub fn log_normalizers(&self, x: &[f64]) -> Vec<f64> {
        let (grid, h) = self.grid(x);
        self.u_values
            .iter()
            .map(|&u| {
                let logs: Vec<f64> = grid.iter().map(|&a| self.log_unnormalized(a, x, u)).collect();
                let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let vals: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
                let z = -(m + Self::trapezoid(&vals, h).ln());
                z + (1.0 + self.normalizer_error * u).ln()
            })
            .collect()
    }

    fn conditional(&self, a: f64, x: &[f64], j: usize, log_zeta: &[f64]) -> f64 {
        (log_zeta[j] + self.log_unnormalized(a, x, self.u_values[j])).exp()
    }

    fn mixture(&self, a: f64, x: &[f64], log_zeta: &[f64]) -> f64 {
        (0..self.u_values.len())
            .map(|j| self.u_probs[j] * self.conditional(a, x, j, log_zeta))
            .sum()
    }
}

/// One elementary check. `a_prime` is set only for odds-ratio checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheck {
    pub check: String,
    pub u: Option<f64>,
    pub a: Option<f64>,
    pub a_prime: Option<f64>,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelReport {
    pub checks: Vec<ModelCheck>,
}

impl ModelReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn all_pass_for(&self, check: &str) -> bool {
        self.checks.iter().filter(|c| c.check == check).all(|c| c.pass)
    }

    /// Largest `value` for a given check name.
    pub fn worst(&self, check: &str) -> Option<&ModelCheck> {
        self.checks
            .iter()
            .filter(|c| c.check == check)
            .max_by(|l, r| l.value.total_cmp(&r.value))
    }

    pub fn failures(&self) -> impl Iterator<Item = &ModelCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&serde_json::to_string(c).expect("check serializes"));
            out.push('\n');
        }
        out
    }
}

/// Checks, at covariate value `x_fixed`:
/// * each `f(a|x,u)` integrates to one (`normalization`);
/// * the marginal odds-ratio bound `|log OR| ≤ γ_r|a − a'|` over all grid
///   pairs and every u (`odds_ratio`, value is `|log OR| − γ_r|a − a'|`);
/// * `|s(a|x,u) − s(a|x)| ≤ γ_r` by central differences (`score_gap`);
/// * `E[s(A|X,U) | a, x] = s(a|x)` (`score_identity`).
///
/// The marginal `f(a|x)` is the u-mixture divided by its quadrature integral.
pub fn verify_model_implication(
    model: &RosenbaumModel,
    a_grid: &[f64],
    x_fixed: &[f64],
) -> Result<ModelReport> {
    if a_grid.is_empty() {
        return Err(Error::domain("a grid must be non-empty"));
    }
    let x = x_fixed;
    let log_zeta = model.log_normalizers(x);
    let (qgrid, h) = model.grid(x);
    let k = model.u_values.len();
    let g = model.gamma_r;
    let mut checks = Vec::new();

    for j in 0..k {
        let vals: Vec<f64> = qgrid.iter().map(|&a| model.conditional(a, x, j, &log_zeta)).collect();
        let err = (RosenbaumModel::trapezoid(&vals, h) - 1.0).abs();
        checks.push(ModelCheck {
            check: "normalization".into(),
            u: Some(model.u_values[j]),
            a: None,
            a_prime: None,
            value: err,
            bound: NORMALIZATION_TOL,
            pass: err <= NORMALIZATION_TOL,
        });
    }

    let mix_vals: Vec<f64> = qgrid.iter().map(|&a| model.mixture(a, x, &log_zeta)).collect();
    let mix_total = RosenbaumModel::trapezoid(&mix_vals, h);
    let marginal = |a: f64| model.mixture(a, x, &log_zeta) / mix_total;
    let log_cond = |a: f64, j: usize| model.conditional(a, x, j, &log_zeta).ln();

    for j in 0..k {
        for &a in a_grid {
            for &ap in a_grid {
                let lor = log_cond(ap, j) + marginal(a).ln() - log_cond(a, j) - marginal(ap).ln();
                let bound = g * (a - ap).abs();
                let excess = lor.abs() - bound;
                checks.push(ModelCheck {
                    check: "odds_ratio".into(),
                    u: Some(model.u_values[j]),
                    a: Some(a),
                    a_prime: Some(ap),
                    value: excess,
                    bound: ODDS_TOL,
                    pass: excess <= ODDS_TOL,
                });
            }
        }
    }

    let fd = |f: &dyn Fn(f64) -> f64, a: f64| (f(a + FD_STEP) - f(a - FD_STEP)) / (2.0 * FD_STEP);
    for &a in a_grid {
        let s_marg = fd(&|v| marginal(v).ln(), a);
        let mut posterior_mean = 0.0;
        for j in 0..k {
            let s_u = fd(&|v| log_cond(v, j), a);
            let gap = (s_u - s_marg).abs();
            checks.push(ModelCheck {
                check: "score_gap".into(),
                u: Some(model.u_values[j]),
                a: Some(a),
                a_prime: None,
                value: gap,
                bound: g + SCORE_GAP_TOL,
                pass: gap <= g + SCORE_GAP_TOL,
            });
            let post = model.u_probs[j] * model.conditional(a, x, j, &log_zeta) / marginal(a);
            posterior_mean += post * s_u;
        }
        let diff = (posterior_mean - s_marg).abs();
        checks.push(ModelCheck {
            check: "score_identity".into(),
            u: None,
            a: Some(a),
            a_prime: None,
            value: diff,
            bound: IDENTITY_TOL,
            pass: diff <= IDENTITY_TOL,
        });
    }
    Ok(ModelReport { checks })
}

/// `n` evenly spaced points on `[lo, hi]`.
pub fn default_a_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}
