//! Independent verification of the closed-form bounds and of the model
//! implications they rest on.

pub mod rosenbaum;
pub mod stratum;
pub mod truth;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng::{stream_rng, STREAM_ORACLE};

pub use rosenbaum::{verify_model_implication, ModelCheck, ModelReport, RosenbaumModel};
pub use stratum::{
    binary_closed_form, histogram_median_correction, local_spacing, solve_atoms, solve_stratum,
    Direction, StratumInstance, StratumSolution,
};
pub use truth::{analytic_truth, ground_truth_ade, score_identity_check, IdentityReport, TruthEstimate};

/// Tolerance for binary instances.
pub const BINARY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceKind {
    Binary,
    Continuous,
}

/// One line of the verification report. The values are those of the
/// maximization; `gap` is the worse of the max and min discrepancies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub instance_id: usize,
    pub kind: InstanceKind,
    pub lp_value: f64,
    pub closed_form: f64,
    pub gap: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropositionReport {
    pub instances: Vec<InstanceReport>,
}

impl PropositionReport {
    pub fn all_pass(&self) -> bool {
        self.instances.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &InstanceReport> {
        self.instances.iter().filter(|r| !r.pass)
    }

    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.instances {
            out.push_str(&serde_json::to_string(r).expect("report serializes"));
            out.push('\n');
        }
        out
    }
}

/// Settings for random instance generation.
#[derive(Debug, Clone, Copy)]
pub struct PropositionSettings {
    pub n_binary: usize,
    pub n_continuous: usize,
    pub min_atoms: usize,
    pub max_atoms: usize,
}

impl PropositionSettings {
    pub fn new(n_binary: usize, n_continuous: usize) -> Self {
        Self {
            n_binary,
            n_continuous,
            min_atoms: 50,
            max_atoms: 500,
        }
    }
}

fn binary_instance<R: Rng>(rng: &mut R) -> Result<StratumInstance> {
    let q: f64 = rng.random_range(0.001..0.999);
    let s0 = rng.random_range(-3.0..3.0);
    let gamma = rng.random_range(0.0..2.0);
    StratumInstance::new(vec![0.0, 1.0], vec![1.0 - q, q], s0, gamma)
}

/// Uniform-grid discretization of a randomly chosen smooth density.
fn continuous_instance<R: Rng>(rng: &mut R, min_atoms: usize, max_atoms: usize) -> Result<StratumInstance> {
    let atoms = rng.random_range(min_atoms..=max_atoms);
    let family = rng.random_range(0..3);
    let loc = rng.random_range(-5.0..5.0);
    let scale = rng.random_range(0.2..3.0);
    let log_density: Box<dyn Fn(f64) -> f64> = match family {
        0 => Box::new(move |y: f64| -0.5 * ((y - loc) / scale).powi(2)),
        1 => {
            // two-component normal mixture
            let sep = rng.random_range(0.5..3.0) * scale;
            let w = rng.random_range(0.2..0.8);
            Box::new(move |y: f64| {
                let a = w * (-0.5 * ((y - loc) / scale).powi(2)).exp();
                let b = (1.0 - w) * (-0.5 * ((y - loc - sep) / scale).powi(2)).exp();
                (a + b).ln()
            })
        }
        _ => {
            // skewed: gamma(k) shape shifted to loc
            let k = rng.random_range(2.0..8.0);
            Box::new(move |y: f64| {
                let z = (y - loc) / scale;
                if z <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    (k - 1.0) * z.ln() - z
                }
            })
        }
    };
    let (lo, hi) = match family {
        0 => (loc - 6.0 * scale, loc + 6.0 * scale),
        1 => (loc - 6.0 * scale, loc + 9.0 * scale),
        _ => (loc + 1e-3 * scale, loc + 40.0 * scale),
    };
    let step = (hi - lo) / (atoms - 1) as f64;
    let y: Vec<f64> = (0..atoms).map(|i| lo + step * i as f64).collect();
    let logs: Vec<f64> = y.iter().map(|&v| log_density(v)).collect();
    let max_log = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logs.iter().map(|l| (l - max_log).exp()).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    let s0 = Normal::new(0.0, 1.5).expect("valid normal").sample(rng);
    let gamma = Gamma::new(2.0, 0.4).expect("valid gamma").sample(rng);
    StratumInstance::new(y, p, s0, gamma)
}

/// Compares the exact LP to the binary closed form (within 1e-9).
pub fn check_binary(id: usize, inst: &StratumInstance) -> InstanceReport {
    let q = inst.probs()[1];
    let lp_max = solve_stratum(inst, Direction::Max).objective;
    let lp_min = solve_stratum(inst, Direction::Min).objective;
    let cf_max = binary_closed_form(q, inst.s0(), inst.gamma(), Direction::Max);
    let cf_min = binary_closed_form(q, inst.s0(), inst.gamma(), Direction::Min);
    let gap = (lp_max - cf_max).abs().max((lp_min - cf_min).abs());
    InstanceReport {
        instance_id: id,
        kind: InstanceKind::Binary,
        lp_value: lp_max,
        closed_form: cf_max,
        gap,
        tolerance: BINARY_TOLERANCE,
        pass: gap <= BINARY_TOLERANCE,
    }
}

/// Compares the exact LP to the continuous closed form evaluated on the
/// histogram version of the discretized law. The allowed gap is
/// `γ × (median-atom mass) × (local spacing)`.
pub fn check_continuous(id: usize, inst: &StratumInstance) -> InstanceReport {
    let base = -inst.s0() * inst.mean();
    let (corr, k) = histogram_median_correction(inst);
    let lp_max = solve_stratum(inst, Direction::Max).objective;
    let lp_min = solve_stratum(inst, Direction::Min).objective;
    let cf_max = base + inst.gamma() * corr;
    let cf_min = base - inst.gamma() * corr;
    let gap = (lp_max - cf_max).abs().max((lp_min - cf_min).abs());
    let tolerance = inst.gamma() * inst.probs()[k] * local_spacing(inst, k);
    // allow for floating-point accumulation over hundreds of atoms
    let slack = 1e-12 * (1.0 + lp_max.abs());
    InstanceReport {
        instance_id: id,
        kind: InstanceKind::Continuous,
        lp_value: lp_max,
        closed_form: cf_max,
        gap,
        tolerance,
        pass: gap <= tolerance + slack,
    }
}

/// Random binary and discretized-continuous instances checked against the
/// closed forms. Binary instances come first, then continuous ones.
pub fn verify_propositions(settings: PropositionSettings, seed: u64) -> Result<PropositionReport> {
    let mut rng = stream_rng(seed, STREAM_ORACLE);
    let mut instances = Vec::with_capacity(settings.n_binary + settings.n_continuous);
    for id in 0..settings.n_binary {
        let inst = binary_instance(&mut rng)?;
        instances.push(check_binary(id, &inst));
    }
    for j in 0..settings.n_continuous {
        let inst = continuous_instance(&mut rng, settings.min_atoms, settings.max_atoms)?;
        instances.push(check_continuous(settings.n_binary + j, &inst));
    }
    Ok(PropositionReport { instances })
}
