//! Observed data, γ grids, run configuration and fold assignment.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nuisance::basis::BasisSpec;
use crate::rng::{stream_rng, STREAM_FOLDS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeType {
    Continuous,
    Binary,
}

impl fmt::Display for OutcomeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutcomeType::Continuous => f.write_str("continuous"),
            OutcomeType::Binary => f.write_str("binary"),
        }
    }
}

impl FromStr for OutcomeType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "continuous" => Ok(OutcomeType::Continuous),
            "binary" => Ok(OutcomeType::Binary),
            other => Err(Error::config(format!("unknown outcome type '{other}'"))),
        }
    }
}

/// One observation `(y, a, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSample {
    pub y: f64,
    pub a: f64,
    pub x: Vec<f64>,
}

/// An ordered, validated collection of samples sharing one covariate dimension.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<ObservedSample>,
    outcome_type: OutcomeType,
    d: usize,
}

impl Dataset {
    pub fn new(samples: Vec<ObservedSample>, outcome_type: OutcomeType) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyDataset)?;
        let d = first.x.len();
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != d {
                return Err(Error::domain(format!(
                    "sample {i} has {} covariates, expected {d}",
                    s.x.len()
                )));
            }
            if !s.y.is_finite() || !s.a.is_finite() || s.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::domain(format!("sample {i} has a non-finite value")));
            }
            if outcome_type == OutcomeType::Binary && s.y != 0.0 && s.y != 1.0 {
                return Err(Error::domain(format!(
                    "binary outcome must be 0 or 1, sample {i} has y = {}",
                    s.y
                )));
            }
        }
        Ok(Self {
            samples,
            outcome_type,
            d,
        })
    }

    pub fn samples(&self) -> &[ObservedSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn outcome_type(&self) -> OutcomeType {
        self.outcome_type
    }

    /// Subset by index, in the order given.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        Self::new(samples, self.outcome_type)
    }
}

fn column_index(name: &str) -> Option<ColumnRole> {
    match name {
        "y" => Some(ColumnRole::Y),
        "a" => Some(ColumnRole::A),
        _ => name
            .strip_prefix('x')
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k >= 1)
            .map(|k| ColumnRole::X(k - 1)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ColumnRole {
    Y,
    A,
    X(usize),
}

/// Reads a header-bearing CSV with columns `y`, `a`, `x1..xd` in any order.
pub fn load_csv(path: impl AsRef<Path>, outcome_type: OutcomeType) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, outcome_type)
}

pub fn read_csv<R: std::io::Read>(reader: R, outcome_type: OutcomeType) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            column: String::new(),
            message: e.to_string(),
        })?
        .clone();

    let mut roles = Vec::with_capacity(headers.len());
    for name in headers.iter() {
        let role = column_index(name).ok_or_else(|| Error::Parse {
            row: 0,
            column: name.to_string(),
            message: "unrecognized column name (expected y, a, x1..xd)".into(),
        })?;
        if roles.contains(&role) {
            return Err(Error::Parse {
                row: 0,
                column: name.to_string(),
                message: "duplicate column".into(),
            });
        }
        roles.push(role);
    }
    for required in [ColumnRole::Y, ColumnRole::A] {
        if !roles.contains(&required) {
            let column = if required == ColumnRole::Y { "y" } else { "a" };
            return Err(Error::Parse {
                row: 0,
                column: column.into(),
                message: "missing required column".into(),
            });
        }
    }
    let d = roles
        .iter()
        .filter(|r| matches!(r, ColumnRole::X(_)))
        .count();
    for k in 0..d {
        if !roles.contains(&ColumnRole::X(k)) {
            return Err(Error::Parse {
                row: 0,
                column: format!("x{}", k + 1),
                message: "covariate columns must be numbered x1..xd without gaps".into(),
            });
        }
    }

    let mut samples = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let mut y = f64::NAN;
        let mut a = f64::NAN;
        let mut x = vec![f64::NAN; d];
        for (cell, (role, name)) in record.iter().zip(roles.iter().zip(headers.iter())) {
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: name.to_string(),
                message: if cell.is_empty() {
                    "missing value".into()
                } else {
                    format!("cannot parse '{cell}' as a number")
                },
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: name.to_string(),
                    message: "non-finite value".into(),
                });
            }
            match role {
                ColumnRole::Y => y = value,
                ColumnRole::A => a = value,
                ColumnRole::X(k) => x[*k] = value,
            }
        }
        if outcome_type == OutcomeType::Binary && y != 0.0 && y != 1.0 {
            return Err(Error::domain(format!(
                "row {row}: binary outcome must be 0 or 1, got {y}"
            )));
        }
        samples.push(ObservedSample { y, a, x });
    }
    Dataset::new(samples, outcome_type)
}

/// Writes `y,a,x1..xd` with shortest round-trip float formatting.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["y".to_string(), "a".to_string()];
    header.extend((1..=dataset.dim()).map(|k| format!("x{k}")));
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    wtr.write_record(&header).map_err(io)?;
    for s in dataset.samples() {
        let mut rec = vec![s.y.to_string(), s.a.to_string()];
        rec.extend(s.x.iter().map(|v| v.to_string()));
        wtr.write_record(&rec).map_err(io)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Evenly spaced, inclusive grid of sensitivity parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaGrid {
    gamma_lo: f64,
    gamma_hi: f64,
    n_points: usize,
}

impl GammaGrid {
    pub fn new(gamma_lo: f64, gamma_hi: f64, n_points: usize) -> Result<Self> {
        if !(gamma_lo.is_finite() && gamma_hi.is_finite()) || gamma_lo < 0.0 {
            return Err(Error::config("gamma grid bounds must be finite and >= 0"));
        }
        if gamma_hi < gamma_lo {
            return Err(Error::config("gamma_hi must be >= gamma_lo"));
        }
        if n_points == 0 {
            return Err(Error::config("gamma grid needs at least one point"));
        }
        Ok(Self {
            gamma_lo,
            gamma_hi,
            n_points,
        })
    }

    pub fn points(&self) -> Vec<f64> {
        if self.n_points == 1 {
            return vec![self.gamma_lo];
        }
        let step = (self.gamma_hi - self.gamma_lo) / (self.n_points - 1) as f64;
        (0..self.n_points)
            .map(|i| {
                if i + 1 == self.n_points {
                    self.gamma_hi
                } else {
                    self.gamma_lo + step * i as f64
                }
            })
            .collect()
    }

    pub fn lo(&self) -> f64 {
        self.gamma_lo
    }

    pub fn hi(&self) -> f64 {
        self.gamma_hi
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub outcome_type: OutcomeType,
    pub folds: usize,
    pub lse_t: f64,
    pub alpha: f64,
    pub seed: u64,
    pub score_truncation: f64,
    pub basis: BasisSpec,
    /// Resmoothing bandwidth; `None` means 0.2 × sd(A) of the training fold.
    pub bandwidth: Option<f64>,
    pub variance_floor: f64,
    pub median_iterations: usize,
    pub median_step: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            outcome_type: OutcomeType::Continuous,
            folds: 5,
            lse_t: 50.0,
            alpha: 0.05,
            seed: 1,
            score_truncation: 50.0,
            basis: BasisSpec::default(),
            bandwidth: None,
            variance_floor: 1e-3,
            median_iterations: 2000,
            median_step: 0.5,
        }
    }
}

/// Keys accepted by [`RunConfig::set`].
pub const RUN_CONFIG_KEYS: &[&str] = &[
    "outcome_type",
    "folds",
    "lse_t",
    "alpha",
    "seed",
    "score_truncation",
    "degree_a",
    "degree_x",
    "interaction_order",
    "ridge",
    "bandwidth",
    "variance_floor",
    "median_iterations",
    "median_step",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("invalid value '{value}' for key '{key}'")))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::config("folds must be >= 2"));
        }
        if !(self.lse_t > 0.0 && self.lse_t.is_finite()) {
            return Err(Error::config("lse_t must be > 0"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("alpha must lie in (0, 1)"));
        }
        if !(self.score_truncation > 0.0) {
            return Err(Error::config("score_truncation must be > 0"));
        }
        if let Some(bw) = self.bandwidth {
            if !(bw > 0.0 && bw.is_finite()) {
                return Err(Error::config("bandwidth must be > 0"));
            }
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::config("variance_floor must be > 0"));
        }
        if self.median_iterations == 0 || !(self.median_step > 0.0) {
            return Err(Error::config("median_iterations and median_step must be positive"));
        }
        self.basis.validate()
    }

    /// Applies one `key = value` pair. Returns `Ok(false)` when the key is not a
    /// run-configuration key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "outcome_type" => self.outcome_type = value.parse()?,
            "folds" => self.folds = parse_value(key, value)?,
            "lse_t" => self.lse_t = parse_value(key, value)?,
            "alpha" => self.alpha = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "score_truncation" => self.score_truncation = parse_value(key, value)?,
            "degree_a" => self.basis.degree_a = parse_value(key, value)?,
            "degree_x" => self.basis.degree_x = parse_value(key, value)?,
            "interaction_order" => self.basis.interaction_order = parse_value(key, value)?,
            "ridge" => self.basis.ridge = parse_value(key, value)?,
            "bandwidth" => {
                self.bandwidth = if value.trim() == "auto" {
                    None
                } else {
                    Some(parse_value(key, value)?)
                }
            }
            "variance_floor" => self.variance_floor = parse_value(key, value)?,
            "median_iterations" => self.median_iterations = parse_value(key, value)?,
            "median_step" => self.median_step = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Parses a flat `key = value` file containing run-configuration keys only.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (key, value) in parse_key_values(text)? {
            if !config.set(&key, &value)? {
                return Err(Error::config(format!("unknown configuration key '{key}'")));
            }
        }
        config.validate()?;
        Ok(config)
    }
}

/// Splits `key = value` lines; `#` starts a comment, blank lines are skipped,
/// and duplicate keys are rejected.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::config(format!("line {}: expected 'key = value'", lineno + 1))
        })?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(Error::config(format!("line {}: empty key", lineno + 1)));
        }
        if seen.insert(key.clone(), lineno).is_some() {
            return Err(Error::config(format!("duplicate key '{key}'")));
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

/// Balanced random fold ids in `0..k`, a function of `(n, k, seed)` only.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::config("number of folds must be >= 2"));
    }
    if n < k {
        return Err(Error::config(format!(
            "cannot split {n} samples into {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, STREAM_FOLDS));
    let mut folds = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        folds[i] = rank % k;
    }
    Ok(folds)
}
