//! Simulation designs with a binary latent confounder and the coverage
//! experiment built on them.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

use crate::data::{Dataset, ObservedSample, OutcomeType, RunConfig};
use crate::error::{Error, Result};
use crate::inference::{cross_fit, estimate_bounds};
use crate::nuisance::BasisLearner;
use crate::oracle::truth::{analytic_truth, ground_truth_ade};
use crate::rng::{derive_seed, stream_rng, STREAM_DATA};

pub const DIM: usize = 5;
pub const GAMMA_RATE_FLOOR: f64 = 0.1;
pub const GAMMA_SHAPE: f64 = 13.0;
pub const GAMMA_BASE_RATE: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DoseFamily {
    Gaussian,
    Gamma,
}

impl fmt::Display for DoseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DoseFamily::Gaussian => "gaussian",
            DoseFamily::Gamma => "gamma",
        })
    }
}

impl FromStr for DoseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" => Ok(DoseFamily::Gaussian),
            "gamma" => Ok(DoseFamily::Gamma),
            other => Err(Error::config(format!(
                "unknown dose family '{other}' (expected gaussian or gamma)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub dose: DoseFamily,
    pub outcome: OutcomeType,
    /// Effect of U on Y.
    pub delta: f64,
    /// Effect of U on A.
    pub zeta: f64,
    pub eta: f64,
}

impl DgpSpec {
    pub fn new(dose: DoseFamily, outcome: OutcomeType, delta: f64) -> Self {
        Self {
            dose,
            outcome,
            delta,
            zeta: std::f64::consts::LN_2,
            eta: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("delta", self.delta), ("zeta", self.zeta), ("eta", self.eta)] {
            if !v.is_finite() {
                return Err(Error::config(format!("dgp.{name} must be finite")));
            }
        }
        Ok(())
    }

    /// Applies a `dgp.*` key. Returns `false` for keys outside that namespace.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let num = || {
            value
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("invalid number for {key}: '{value}'")))
        };
        match key {
            "dgp.dose" => self.dose = value.parse()?,
            "dgp.outcome" => self.outcome = value.parse()?,
            "dgp.delta" => self.delta = num()?,
            "dgp.zeta" => self.zeta = num()?,
            "dgp.eta" => self.eta = num()?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Per-replication coefficient draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpCoefficients {
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub eta_ax: Vec<f64>,
}

impl DgpCoefficients {
    /// θ ~ N(0,1), β ~ N(−1,1), η_AX ~ N(0, 1/4), componentwise.
    pub fn draw<R: Rng>(rng: &mut R) -> Self {
        let mut v = |mean: f64, sd: f64| -> Vec<f64> {
            (0..DIM)
                .map(|_| mean + sd * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let theta = v(0.0, 1.0);
        let beta = v(-1.0, 1.0);
        let eta_ax = v(0.0, 0.5);
        Self { theta, beta, eta_ax }
    }

    pub fn zeros() -> Self {
        Self {
            theta: vec![0.0; DIM],
            beta: vec![0.0; DIM],
            eta_ax: vec![0.0; DIM],
        }
    }
}

/// One full draw including the latent column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentDraw {
    pub x: [f64; DIM],
    pub u: f64,
    pub a: f64,
    /// Gamma rate actually used (after flooring); `None` for Gaussian doses.
    pub rate: Option<f64>,
    /// The Gamma rate was nonpositive before flooring.
    pub rate_nonpositive: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    StatNormal::standard().cdf(z)
}

/// Draws (X, U, A).
pub fn draw_latent<R: Rng>(spec: &DgpSpec, coefs: &DgpCoefficients, rng: &mut R) -> LatentDraw {
    let mut x = [0.0; DIM];
    for v in x.iter_mut() {
        *v = rng.random::<f64>();
    }
    let pu = std_normal_cdf((x[0] + x[1]).sin());
    let u = if rng.random::<f64>() < pu { 1.0 } else { 0.0 };
    let tx = dot(&coefs.theta, &x);
    match spec.dose {
        DoseFamily::Gaussian => {
            let a = tx + spec.zeta * u + rng.sample::<f64, _>(StandardNormal);
            LatentDraw {
                x,
                u,
                a,
                rate: None,
                rate_nonpositive: false,
            }
        }
        DoseFamily::Gamma => {
            let raw = GAMMA_BASE_RATE + tx - spec.zeta * u;
            let rate = raw.max(GAMMA_RATE_FLOOR);
            let a = Gamma::new(GAMMA_SHAPE, 1.0 / rate)
                .expect("shape and scale are positive")
                .sample(rng);
            LatentDraw {
                x,
                u,
                a,
                rate: Some(rate),
                rate_nonpositive: raw <= 0.0,
            }
        }
    }
}

/// Linear index `ηA + βᵀX + δU + A·(η_AXᵀX)`.
pub fn outcome_index(spec: &DgpSpec, coefs: &DgpCoefficients, d: &LatentDraw) -> f64 {
    spec.eta * d.a + dot(&coefs.beta, &d.x) + spec.delta * d.u + d.a * dot(&coefs.eta_ax, &d.x)
}

/// `∂ₐE[Y | A, X, U]` at the draw.
pub fn outcome_derivative(spec: &DgpSpec, coefs: &DgpCoefficients, d: &LatentDraw) -> f64 {
    let slope = spec.eta + dot(&coefs.eta_ax, &d.x);
    match spec.outcome {
        OutcomeType::Continuous => slope,
        OutcomeType::Binary => {
            let idx = outcome_index(spec, coefs, d);
            (-0.5 * idx * idx).exp() / (2.0 * std::f64::consts::PI).sqrt() * slope
        }
    }
}

/// `s(A | X, U)` for the drawn stratum.
pub fn latent_score(spec: &DgpSpec, coefs: &DgpCoefficients, d: &LatentDraw) -> f64 {
    match spec.dose {
        DoseFamily::Gaussian => -(d.a - dot(&coefs.theta, &d.x) - spec.zeta * d.u),
        DoseFamily::Gamma => (GAMMA_SHAPE - 1.0) / d.a - d.rate.expect("gamma draw has a rate"),
    }
}

pub fn draw_outcome<R: Rng>(spec: &DgpSpec, coefs: &DgpCoefficients, d: &LatentDraw, rng: &mut R) -> f64 {
    let idx = outcome_index(spec, coefs, d);
    let e: f64 = rng.sample(StandardNormal);
    match spec.outcome {
        OutcomeType::Continuous => idx + e,
        OutcomeType::Binary => {
            if idx + e > 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Hidden part of a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthContext {
    pub coefficients: DgpCoefficients,
    pub u: Vec<f64>,
    /// Number of Gamma draws whose rate was nonpositive before flooring.
    pub rate_floor_events: usize,
}

pub fn draw_dataset_with<R: Rng>(
    spec: &DgpSpec,
    coefs: &DgpCoefficients,
    n: usize,
    rng: &mut R,
) -> Result<(Dataset, TruthContext)> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    spec.validate()?;
    let mut samples = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(n);
    let mut floor_events = 0;
    for _ in 0..n {
        let d = draw_latent(spec, coefs, rng);
        floor_events += d.rate_nonpositive as usize;
        let y = draw_outcome(spec, coefs, &d, rng);
        u.push(d.u);
        samples.push(ObservedSample {
            y,
            a: d.a,
            x: d.x.to_vec(),
        });
    }
    let ds = Dataset::new(samples, spec.outcome)?;
    Ok((
        ds,
        TruthContext {
            coefficients: coefs.clone(),
            u,
            rate_floor_events: floor_events,
        },
    ))
}

/// Draws fresh coefficients and `n` observations from one seeded stream.
pub fn draw_dataset(spec: &DgpSpec, n: usize, seed: u64) -> Result<(Dataset, TruthContext)> {
    let mut rng = stream_rng(seed, STREAM_DATA);
    let coefs = DgpCoefficients::draw(&mut rng);
    draw_dataset_with(spec, &coefs, n, &mut rng)
}

/// The five sensitivity values of the coverage table: `{0, ¼, ½, ¾, 1}·ln2`.
pub fn table_gammas() -> Vec<f64> {
    [0.0, 0.25, 0.5, 0.75, 1.0]
        .iter()
        .map(|f| f * std::f64::consts::LN_2)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageOptions {
    pub n: usize,
    pub reps: usize,
    pub gammas: Vec<f64>,
    pub truth_mc: usize,
    pub seed: u64,
}

impl CoverageOptions {
    pub fn new(n: usize, reps: usize, seed: u64) -> Self {
        Self {
            n,
            reps,
            gammas: table_gammas(),
            truth_mc: 1_000_000,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCell {
    pub gamma: f64,
    pub reps: usize,
    pub covered: usize,
    pub coverage: f64,
    pub mean_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub rep: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub spec: DgpSpec,
    pub n: usize,
    pub cells: Vec<CoverageCell>,
    pub failures: Vec<ReplicationFailure>,
    pub rate_floor_events: usize,
    /// Wall-clock seconds per successful replication; not part of any output file.
    pub mean_runtime: f64,
}

impl CoverageReport {
    pub fn cell(&self, gamma: f64) -> Option<&CoverageCell> {
        self.cells.iter().find(|c| (c.gamma - gamma).abs() < 1e-12)
    }
}

struct RepOutcome {
    covered: Vec<bool>,
    widths: Vec<f64>,
    floor_events: usize,
    seconds: f64,
}

fn one_replication(
    spec: &DgpSpec,
    opts: &CoverageOptions,
    config: &RunConfig,
    rep: usize,
) -> Result<RepOutcome> {
    let start = Instant::now();
    let rep_seed = derive_seed(opts.seed, rep as u64);
    let (data, ctx) = draw_dataset(spec, opts.n, rep_seed)?;
    let truth = match analytic_truth(spec, &ctx.coefficients) {
        Some(v) => v,
        None => ground_truth_ade(spec, &ctx.coefficients, opts.truth_mc, rep_seed)?.value,
    };
    let mut cfg = config.clone();
    cfg.outcome_type = spec.outcome;
    cfg.seed = rep_seed;
    let eif = cross_fit(&data, &cfg, &BasisLearner, None)?;
    let mut covered = Vec::with_capacity(opts.gammas.len());
    let mut widths = Vec::with_capacity(opts.gammas.len());
    for &g in &opts.gammas {
        // two-sided interval: each one-sided limit at α/2
        let est = estimate_bounds(&eif, g, cfg.alpha / 2.0)?;
        covered.push(est.ci_lower <= truth && truth <= est.ci_upper);
        widths.push(est.ci_upper - est.ci_lower);
    }
    Ok(RepOutcome {
        covered,
        widths,
        floor_events: ctx.rate_floor_events,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs `reps` independent replications. Results depend only on the spec,
/// options and config, never on scheduling.
pub fn coverage_experiment(
    spec: &DgpSpec,
    opts: &CoverageOptions,
    config: &RunConfig,
) -> Result<CoverageReport> {
    if opts.reps == 0 {
        return Err(Error::config("reps must be >= 1"));
    }
    if opts.gammas.is_empty() || opts.gammas.iter().any(|g| !(*g >= 0.0)) {
        return Err(Error::config("gammas must be a non-empty list of values >= 0"));
    }
    if opts.truth_mc == 0 {
        return Err(Error::config("truth_mc must be >= 1"));
    }
    spec.validate()?;
    config.validate()?;
    let outcomes: Vec<Result<RepOutcome>> = (0..opts.reps)
        .into_par_iter()
        .map(|r| one_replication(spec, opts, config, r))
        .collect();

    let k = opts.gammas.len();
    let mut covered = vec![0usize; k];
    let mut width_sum = vec![0.0; k];
    let mut ok = 0usize;
    let mut failures = Vec::new();
    let mut floor_events = 0usize;
    let mut seconds = 0.0;
    for (rep, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(o) => {
                ok += 1;
                floor_events += o.floor_events;
                seconds += o.seconds;
                for j in 0..k {
                    covered[j] += o.covered[j] as usize;
                    width_sum[j] += o.widths[j];
                }
            }
            Err(e) => failures.push(ReplicationFailure {
                rep,
                message: e.to_string(),
            }),
        }
    }
    if ok == 0 {
        return Err(Error::Numerical(format!(
            "all {} replications failed; first: {}",
            opts.reps, failures[0].message
        )));
    }
    let cells = opts
        .gammas
        .iter()
        .enumerate()
        .map(|(j, &g)| CoverageCell {
            gamma: g,
            reps: ok,
            covered: covered[j],
            coverage: covered[j] as f64 / ok as f64,
            mean_width: width_sum[j] / ok as f64,
        })
        .collect();
    Ok(CoverageReport {
        spec: *spec,
        n: opts.n,
        cells,
        failures,
        rate_floor_events: floor_events,
        mean_runtime: seconds / ok as f64,
    })
}

/// Renders reports as a text table (one row per design, one column per γ)
/// and a long-format CSV with `dose,outcome,delta,gamma,coverage,reps,mean_width`.
pub fn emit_table(reports: &[CoverageReport]) -> Result<(String, String)> {
    if reports.is_empty() || reports.iter().all(|r| r.cells.is_empty()) {
        return Err(Error::domain("coverage report is empty"));
    }
    let mut columns: Vec<f64> = Vec::new();
    for r in reports {
        for c in &r.cells {
            if !columns.iter().any(|g| (g - c.gamma).abs() < 1e-12) {
                columns.push(c.gamma);
            }
        }
    }
    columns.sort_by(f64::total_cmp);

    let mut text = String::new();
    text.push_str(&format!("{:<10}{:<12}{:>7}", "dose", "outcome", "delta"));
    for g in &columns {
        text.push_str(&format!("{:>10}", format!("{:.4}", g)));
    }
    text.push('\n');
    for r in reports {
        text.push_str(&format!(
            "{:<10}{:<12}{:>7.2}",
            r.spec.dose.to_string(),
            r.spec.outcome.to_string(),
            r.spec.delta
        ));
        for g in &columns {
            match r.cell(*g) {
                Some(c) => text.push_str(&format!("{:>10.2}", c.coverage)),
                None => text.push_str(&format!("{:>10}", "-")),
            }
        }
        text.push('\n');
    }

    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["dose", "outcome", "delta", "gamma", "coverage", "reps", "mean_width"])
        .map_err(|e| Error::Internal(e.to_string()))?;
    for r in reports {
        for c in &r.cells {
            wtr.write_record([
                r.spec.dose.to_string(),
                r.spec.outcome.to_string(),
                r.spec.delta.to_string(),
                c.gamma.to_string(),
                c.coverage.to_string(),
                c.reps.to_string(),
                c.mean_width.to_string(),
            ])
            .map_err(|e| Error::Internal(e.to_string()))?;
        }
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
    let csv_text = String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))?;
    Ok((text, csv_text))
}
