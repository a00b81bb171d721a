//! Nuisance learners for μ(a,x), μ'(a,x), the exposure score s(a|x) and the
//! conditional median M(a,x).
//!
//! Every fitted function is exposed through [`Predictor`], so callers can swap
//! in closed-form oracle predictors by building a [`NuisanceFit`] directly.

pub mod basis;
pub mod regression;
pub mod smoothing;

use std::sync::Arc;

use crate::data::{Dataset, OutcomeType, RunConfig};
use crate::error::{Error, Result};

use basis::{BasisSpec, FeatureMap};
use regression::{dot, logistic_prob, ridge_least_squares, ridge_logistic};
pub use smoothing::{resmooth_derivative, smoothed_mean, SmoothedDerivative};

/// Probability clip applied to binary mean predictions.
pub const PROB_CLIP: f64 = 1e-6;

/// A deterministic function of `(a, x)`.
pub trait Predictor: Send + Sync {
    fn predict(&self, a: f64, x: &[f64]) -> f64;
}

impl<F> Predictor for F
where
    F: Fn(f64, &[f64]) -> f64 + Send + Sync,
{
    fn predict(&self, a: f64, x: &[f64]) -> f64 {
        self(a, x)
    }
}

/// Linear predictor on a fitted feature map.
#[derive(Debug, Clone)]
pub struct LinearPredictor {
    map: FeatureMap,
    coef: Vec<f64>,
}

impl LinearPredictor {
    pub fn coefficients(&self) -> &[f64] {
        &self.coef
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn with_coefficients(&self, coef: Vec<f64>) -> Self {
        assert_eq!(coef.len(), self.coef.len());
        Self {
            map: self.map.clone(),
            coef,
        }
    }

    fn linear(&self, a: f64, x: &[f64]) -> f64 {
        let mut row = Vec::with_capacity(self.coef.len());
        self.map.fill(a, x, &mut row);
        dot(&row, &self.coef)
    }
}

impl Predictor for LinearPredictor {
    fn predict(&self, a: f64, x: &[f64]) -> f64 {
        self.linear(a, x)
    }
}

/// Fitted conditional mean: least squares for continuous outcomes, logistic
/// for binary outcomes (clipped to `[1e-6, 1 - 1e-6]`).
#[derive(Debug, Clone)]
pub enum MeanPredictor {
    Linear(LinearPredictor),
    Logistic(LinearPredictor),
}

impl Predictor for MeanPredictor {
    fn predict(&self, a: f64, x: &[f64]) -> f64 {
        match self {
            MeanPredictor::Linear(lp) => lp.linear(a, x),
            MeanPredictor::Logistic(lp) => {
                logistic_prob(lp.linear(a, x)).clamp(PROB_CLIP, 1.0 - PROB_CLIP)
            }
        }
    }
}

pub fn fit_conditional_mean(train: &Dataset, spec: &BasisSpec) -> Result<MeanPredictor> {
    let map = FeatureMap::joint(train, spec);
    map.check_capacity(train.len())?;
    let design = map.design(train);
    let y: Vec<f64> = train.samples().iter().map(|s| s.y).collect();
    let p = map.n_features();
    match train.outcome_type() {
        OutcomeType::Continuous => {
            let coef = ridge_least_squares(&design, p, &y, spec.ridge)?;
            Ok(MeanPredictor::Linear(LinearPredictor { map, coef }))
        }
        OutcomeType::Binary => {
            let coef = ridge_logistic(&design, p, &y, spec.ridge)?;
            Ok(MeanPredictor::Logistic(LinearPredictor { map, coef }))
        }
    }
}

/// Gaussian location-scale score `s(a|x) = −(a − m(x)) / σ²(x)`, truncated.
#[derive(Debug, Clone)]
pub struct ScorePredictor {
    location: LinearPredictor,
    variance: LinearPredictor,
    variance_floor: f64,
    truncation: f64,
}

impl ScorePredictor {
    pub fn location(&self, x: &[f64]) -> f64 {
        self.location.linear(0.0, x)
    }

    pub fn variance(&self, x: &[f64]) -> f64 {
        self.variance.linear(0.0, x).max(self.variance_floor)
    }

    /// Untruncated score.
    pub fn raw_score(&self, a: f64, x: &[f64]) -> f64 {
        -(a - self.location(x)) / self.variance(x)
    }
}

impl Predictor for ScorePredictor {
    fn predict(&self, a: f64, x: &[f64]) -> f64 {
        self.raw_score(a, x).clamp(-self.truncation, self.truncation)
    }
}

pub fn fit_score_location_scale(
    train: &Dataset,
    spec: &BasisSpec,
    variance_floor: f64,
    truncation: f64,
) -> Result<ScorePredictor> {
    if !(variance_floor > 0.0) {
        return Err(Error::config("variance floor must be > 0"));
    }
    if !(truncation > 0.0) {
        return Err(Error::config("score truncation must be > 0"));
    }
    let samples = train.samples();
    let a0 = samples[0].a;
    if samples.iter().all(|s| s.a == a0) {
        return Err(Error::DegenerateExposure);
    }
    let map = FeatureMap::covariates(train, spec);
    map.check_capacity(train.len())?;
    let design = map.design(train);
    let p = map.n_features();
    let a: Vec<f64> = samples.iter().map(|s| s.a).collect();
    let loc_coef = ridge_least_squares(&design, p, &a, spec.ridge)?;
    let sq: Vec<f64> = design
        .chunks_exact(p)
        .zip(&a)
        .map(|(row, &ai)| (ai - dot(row, &loc_coef)).powi(2))
        .collect();
    let var_coef = ridge_least_squares(&design, p, &sq, spec.ridge)?;
    Ok(ScorePredictor {
        location: LinearPredictor {
            map: map.clone(),
            coef: loc_coef,
        },
        variance: LinearPredictor {
            map,
            coef: var_coef,
        },
        variance_floor,
        truncation,
    })
}

/// Mean absolute residual, i.e. twice the mean pinball loss at level 1/2.
pub fn mean_abs_loss(design: &[f64], p: usize, y: &[f64], coef: &[f64]) -> f64 {
    design
        .chunks_exact(p)
        .zip(y)
        .map(|(row, &yi)| (yi - dot(row, coef)).abs())
        .sum::<f64>()
        / y.len() as f64
}

/// Subgradient settings for the median fit.
#[derive(Debug, Clone, Copy)]
pub struct MedianSchedule {
    pub iterations: usize,
    /// Initial step as a multiple of the outcome standard deviation; decays as 1/√k.
    pub step: f64,
}

impl Default for MedianSchedule {
    fn default() -> Self {
        Self {
            iterations: 2000,
            step: 0.5,
        }
    }
}

/// Conditional median by subgradient descent on the pinball loss at level 1/2,
/// started from the least-squares fit and returning the best iterate.
pub fn fit_conditional_median(
    train: &Dataset,
    spec: &BasisSpec,
    schedule: MedianSchedule,
) -> Result<LinearPredictor> {
    if train.outcome_type() == OutcomeType::Binary {
        return Err(Error::Unsupported(
            "conditional median is only defined for continuous outcomes".into(),
        ));
    }
    let map = FeatureMap::joint(train, spec);
    map.check_capacity(train.len())?;
    let design = map.design(train);
    let p = map.n_features();
    let y: Vec<f64> = train.samples().iter().map(|s| s.y).collect();
    let n = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    let ysd = (y.iter().map(|v| (v - ybar).powi(2)).sum::<f64>() / n).sqrt();

    let mut coef = ridge_least_squares(&design, p, &y, spec.ridge.max(1e-10))?;
    let mut best = coef.clone();
    let mut best_loss = mean_abs_loss(&design, p, &y, &coef);
    if ysd == 0.0 {
        return Ok(LinearPredictor { map, coef: best });
    }
    let step0 = schedule.step * ysd;
    let mut grad = vec![0.0; p];
    for k in 0..schedule.iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (row, &yi) in design.chunks_exact(p).zip(&y) {
            let r = yi - dot(row, &coef);
            let sign = if r > 0.0 {
                1.0
            } else if r < 0.0 {
                -1.0
            } else {
                0.0
            };
            if sign != 0.0 {
                for (g, v) in grad.iter_mut().zip(row) {
                    *g -= sign * v;
                }
            }
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt() / n;
        if norm == 0.0 {
            break;
        }
        let step = step0 / ((k + 1) as f64).sqrt();
        for (c, g) in coef.iter_mut().zip(&grad) {
            *c -= step * g / n / norm.max(1.0);
        }
        let loss = mean_abs_loss(&design, p, &y, &coef);
        if loss < best_loss {
            best_loss = loss;
            best.copy_from_slice(&coef);
        }
    }
    Ok(LinearPredictor { map, coef: best })
}

/// Fitted nuisance functions for one training split.
#[derive(Clone)]
pub struct NuisanceFit {
    outcome_type: OutcomeType,
    mu: Arc<dyn Predictor>,
    mu_prime: Arc<dyn Predictor>,
    score: Arc<dyn Predictor>,
    median: Option<Arc<dyn Predictor>>,
}

impl std::fmt::Debug for NuisanceFit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NuisanceFit")
            .field("outcome_type", &self.outcome_type)
            .field("has_median", &self.median.is_some())
            .finish()
    }
}

impl NuisanceFit {
    /// Assembles a fit from arbitrary predictors (oracle injection).
    /// Continuous outcomes require a median predictor.
    pub fn from_predictors(
        outcome_type: OutcomeType,
        mu: Arc<dyn Predictor>,
        mu_prime: Arc<dyn Predictor>,
        score: Arc<dyn Predictor>,
        median: Option<Arc<dyn Predictor>>,
    ) -> Result<Self> {
        if outcome_type == OutcomeType::Continuous && median.is_none() {
            return Err(Error::config(
                "continuous outcomes need a conditional median predictor",
            ));
        }
        let median = match outcome_type {
            OutcomeType::Continuous => median,
            OutcomeType::Binary => None,
        };
        Ok(Self {
            outcome_type,
            mu,
            mu_prime,
            score,
            median,
        })
    }

    pub fn outcome_type(&self) -> OutcomeType {
        self.outcome_type
    }

    pub fn predict_mu(&self, a: f64, x: &[f64]) -> f64 {
        self.mu.predict(a, x)
    }

    pub fn predict_mu_prime(&self, a: f64, x: &[f64]) -> f64 {
        self.mu_prime.predict(a, x)
    }

    pub fn predict_score(&self, a: f64, x: &[f64]) -> f64 {
        self.score.predict(a, x)
    }

    pub fn predict_median(&self, a: f64, x: &[f64]) -> Result<f64> {
        match &self.median {
            Some(m) => Ok(m.predict(a, x)),
            None => Err(Error::Unsupported(
                "conditional median is not available for binary outcomes".into(),
            )),
        }
    }
}

fn exposure_sd(train: &Dataset) -> f64 {
    let n = train.len() as f64;
    let mean = train.samples().iter().map(|s| s.a).sum::<f64>() / n;
    (train.samples().iter().map(|s| (s.a - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Fits every nuisance function required for the dataset's outcome type.
pub fn fit_all(train: &Dataset, config: &RunConfig) -> Result<NuisanceFit> {
    if train.outcome_type() != config.outcome_type {
        return Err(Error::config(format!(
            "dataset outcome type {} does not match configured {}",
            train.outcome_type(),
            config.outcome_type
        )));
    }
    let spec = &config.basis;
    let mu: Arc<dyn Predictor> = Arc::new(fit_conditional_mean(train, spec)?);
    let bandwidth = match config.bandwidth {
        Some(bw) => bw,
        None => {
            let sd = exposure_sd(train);
            if sd == 0.0 {
                return Err(Error::DegenerateExposure);
            }
            0.2 * sd
        }
    };
    let mu_prime: Arc<dyn Predictor> = Arc::new(resmooth_derivative(mu.clone(), bandwidth)?);
    let score: Arc<dyn Predictor> = Arc::new(fit_score_location_scale(
        train,
        spec,
        config.variance_floor,
        config.score_truncation,
    )?);
    let median: Option<Arc<dyn Predictor>> = match train.outcome_type() {
        OutcomeType::Continuous => Some(Arc::new(fit_conditional_median(
            train,
            spec,
            MedianSchedule {
                iterations: config.median_iterations,
                step: config.median_step,
            },
        )?)),
        OutcomeType::Binary => None,
    };
    NuisanceFit::from_predictors(train.outcome_type(), mu, mu_prime, score, median)
}

/// Pluggable nuisance learner used by the cross-fitting pipeline.
pub trait NuisanceLearner: Send + Sync {
    fn fit(&self, train: &Dataset, config: &RunConfig) -> Result<NuisanceFit>;
}

/// The default ridge-basis learner stack.
#[derive(Debug, Clone, Copy, Default)]
pub struct BasisLearner;

impl NuisanceLearner for BasisLearner {
    fn fit(&self, train: &Dataset, config: &RunConfig) -> Result<NuisanceFit> {
        fit_all(train, config)
    }
}

/// A learner that ignores the training data and returns fixed predictors.
#[derive(Clone)]
pub struct OracleLearner(pub NuisanceFit);

impl NuisanceLearner for OracleLearner {
    fn fit(&self, _train: &Dataset, _config: &RunConfig) -> Result<NuisanceFit> {
        Ok(self.0.clone())
    }
}
