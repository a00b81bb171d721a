//! Standardized polynomial tensor basis in `(a, x)`.

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Polynomial basis settings shared by the regression learners.
///
/// Features are built on standardized inputs: powers `a^k` (k ≤ `degree_a`),
/// powers `x_j^l` (l ≤ `degree_x`), pairwise products `x_j x_k` when
/// `degree_x ≥ 2` and `interaction_order ≥ 2`, and cross terms `a^k x_j^l`
/// with `k + l ≤ interaction_order`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    pub degree_a: usize,
    pub degree_x: usize,
    pub interaction_order: usize,
    pub ridge: f64,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self {
            degree_a: 3,
            degree_x: 2,
            interaction_order: 2,
            ridge: 1e-6,
        }
    }
}

impl BasisSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::config("ridge penalty must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Standardizer {
    center: f64,
    scale: f64,
}

impl Standardizer {
    fn fit(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count().max(1) as f64;
        let center = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - center).powi(2)).sum::<f64>() / n;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        Self { center, scale }
    }

    #[inline]
    fn apply(&self, v: f64) -> f64 {
        (v - self.center) / self.scale
    }
}

/// A fitted feature map: the basis layout plus the training standardization.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    spec: BasisSpec,
    include_a: bool,
    a_std: Standardizer,
    x_std: Vec<Standardizer>,
    n_features: usize,
}

impl FeatureMap {
    /// Basis over `(a, x)`.
    pub fn joint(train: &Dataset, spec: &BasisSpec) -> Self {
        Self::build(train, spec, true)
    }

    /// Basis over `x` only.
    pub fn covariates(train: &Dataset, spec: &BasisSpec) -> Self {
        Self::build(train, spec, false)
    }

    fn build(train: &Dataset, spec: &BasisSpec, include_a: bool) -> Self {
        let samples = train.samples();
        let a_std = Standardizer::fit(samples.iter().map(|s| s.a));
        let x_std = (0..train.dim())
            .map(|j| Standardizer::fit(samples.iter().map(move |s| s.x[j])))
            .collect();
        let mut map = Self {
            spec: spec.clone(),
            include_a,
            a_std,
            x_std,
            n_features: 0,
        };
        let mut buf = Vec::new();
        map.fill(0.0, &vec![0.0; train.dim()], &mut buf);
        map.n_features = buf.len();
        map
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Writes the feature vector (intercept first) into `out`.
    pub fn fill(&self, a: f64, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        let spec = &self.spec;
        let za = self.a_std.apply(a);
        let zx: Vec<f64> = x
            .iter()
            .zip(&self.x_std)
            .map(|(&v, s)| s.apply(v))
            .collect();

        if self.include_a {
            let mut p = 1.0;
            for _ in 0..spec.degree_a {
                p *= za;
                out.push(p);
            }
        }
        for &z in &zx {
            let mut p = 1.0;
            for _ in 0..spec.degree_x {
                p *= z;
                out.push(p);
            }
        }
        if spec.degree_x >= 2 && spec.interaction_order >= 2 {
            for j in 0..zx.len() {
                for k in (j + 1)..zx.len() {
                    out.push(zx[j] * zx[k]);
                }
            }
        }
        if self.include_a {
            let mut pa = 1.0;
            for ka in 1..=spec.degree_a {
                pa *= za;
                for &z in &zx {
                    let mut px = 1.0;
                    for lx in 1..=spec.degree_x {
                        px *= z;
                        if ka + lx <= spec.interaction_order {
                            out.push(pa * px);
                        }
                    }
                }
            }
        }
    }

    /// Row-major design matrix for a dataset.
    pub fn design(&self, data: &Dataset) -> Vec<f64> {
        let p = self.n_features;
        let mut out = Vec::with_capacity(data.len() * p);
        let mut row = Vec::with_capacity(p);
        for s in data.samples() {
            self.fill(s.a, &s.x, &mut row);
            out.extend_from_slice(&row);
        }
        out
    }

    pub(crate) fn check_capacity(&self, n: usize) -> Result<()> {
        if self.n_features >= n {
            return Err(Error::config(format!(
                "basis has {} features but only {n} training samples",
                self.n_features
            )));
        }
        Ok(())
    }
}
