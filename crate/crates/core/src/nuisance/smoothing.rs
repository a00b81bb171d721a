//! Gaussian resmoothing of a fitted mean and its exposure derivative.
//!
//! For a bandwidth σ the smoothed mean is `m̃(a, x) = E[μ̂(a + σZ, x)]` with
//! `Z ~ N(0, 1)`; by Stein's identity its derivative is
//! `E[μ̂(a + σZ, x) · Z] / σ`, which only needs evaluations of `μ̂`.
//! Both expectations use a 21-node Gauss–Hermite rule for the standard
//! normal weight, exact for polynomials of degree ≤ 41.

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;

use super::Predictor;
use crate::error::{Error, Result};

pub const QUADRATURE_NODES: usize = 21;

/// Nodes and weights of the `n`-point probabilists' Gauss–Hermite rule
/// (weights sum to one), via Golub–Welsch.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // enforce exact symmetry of the rule
    let mut nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let z = 0.5 * (nodes[j] - nodes[i]);
        nodes[i] = -z;
        nodes[j] = z;
        let w = 0.5 * (weights[i] + weights[j]);
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    (nodes, weights)
}

fn rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_hermite(QUADRATURE_NODES))
}

/// `E[μ̂(a + σZ, x)]` under the quadrature rule.
pub fn smoothed_mean(mu: &dyn Predictor, bandwidth: f64, a: f64, x: &[f64]) -> f64 {
    let (nodes, weights) = rule();
    nodes
        .iter()
        .zip(weights)
        .map(|(z, w)| w * mu.predict(a + bandwidth * z, x))
        .sum()
}

/// Derivative in `a` of the Gaussian-smoothed mean.
#[derive(Clone)]
pub struct SmoothedDerivative {
    base: Arc<dyn Predictor>,
    bandwidth: f64,
}

impl SmoothedDerivative {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }
}

impl Predictor for SmoothedDerivative {
    fn predict(&self, a: f64, x: &[f64]) -> f64 {
        let (nodes, weights) = rule();
        let acc: f64 = nodes
            .iter()
            .zip(weights)
            .map(|(z, w)| w * z * self.base.predict(a + self.bandwidth * z, x))
            .sum();
        acc / self.bandwidth
    }
}

pub fn resmooth_derivative(mu: Arc<dyn Predictor>, bandwidth: f64) -> Result<SmoothedDerivative> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::config("resmoothing bandwidth must be > 0"));
    }
    Ok(SmoothedDerivative {
        base: mu,
        bandwidth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_normal_moments() {
        let (z, w) = gauss_hermite(QUADRATURE_NODES);
        let moment = |k: i32| -> f64 { z.iter().zip(&w).map(|(z, w)| w * z.powi(k)).sum() };
        assert!((moment(0) - 1.0).abs() < 1e-13);
        assert!(moment(1).abs() < 1e-13);
        assert!((moment(2) - 1.0).abs() < 1e-12);
        assert!((moment(4) - 3.0).abs() < 1e-11);
        assert!((moment(6) - 15.0).abs() < 1e-10);
    }

    #[test]
    fn linear_mean_is_a_fixed_point() {
        let mu: Arc<dyn Predictor> = Arc::new(|a: f64, _x: &[f64]| 2.0 * a);
        for bw in [0.01, 0.3, 2.0] {
            let d = resmooth_derivative(mu.clone(), bw).unwrap();
            for a in [-3.0, 0.0, 1.7] {
                assert!((d.predict(a, &[]) - 2.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn quadratic_small_bandwidth() {
        let mu: Arc<dyn Predictor> = Arc::new(|a: f64, _x: &[f64]| a * a);
        let d = resmooth_derivative(mu, 0.01).unwrap();
        assert!((d.predict(1.0, &[]) - 2.0).abs() < 1e-3);
    }

    #[test]
    fn constant_has_zero_derivative() {
        let mu: Arc<dyn Predictor> = Arc::new(|_a: f64, _x: &[f64]| 4.2);
        let d = resmooth_derivative(mu, 0.5).unwrap();
        assert!(d.predict(0.3, &[]).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_bandwidth() {
        let mu: Arc<dyn Predictor> = Arc::new(|a: f64, _x: &[f64]| a);
        assert!(resmooth_derivative(mu.clone(), 0.0).is_err());
        assert!(resmooth_derivative(mu, f64::NAN).is_err());
    }
}
