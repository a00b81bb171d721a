//! Ridge least squares and ridge logistic regression on a row-major design.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solves `(ΦᵀΦ/n + λ·P) β = Φᵀy/n`, where `P` penalizes every coefficient
/// except the intercept in column 0.
pub fn ridge_least_squares(design: &[f64], p: usize, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let n = y.len();
    debug_assert_eq!(design.len(), n * p);
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for (row, &yi) in design.chunks_exact(p).zip(y) {
        for j in 0..p {
            let rj = row[j];
            if rj == 0.0 {
                continue;
            }
            rhs[j] += rj * yi;
            for k in j..p {
                gram[(j, k)] += rj * row[k];
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    for j in 0..p {
        for k in j..p {
            let v = gram[(j, k)] * inv_n;
            gram[(j, k)] = v;
            gram[(k, j)] = v;
        }
        if j > 0 {
            gram[(j, j)] += lambda;
        }
    }
    rhs *= inv_n;
    solve_spd(gram, rhs, lambda)
}

fn solve_spd(gram: DMatrix<f64>, rhs: DVector<f64>, lambda: f64) -> Result<Vec<f64>> {
    let scale = gram.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let chol = gram.cholesky().ok_or_else(|| singular_error(lambda))?;
    let min_pivot = chol
        .l_dirty()
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min_pivot * min_pivot < 1e-13 * scale {
        return Err(singular_error(lambda));
    }
    Ok(chol.solve(&rhs).iter().copied().collect())
}

fn singular_error(lambda: f64) -> Error {
    if lambda == 0.0 {
        Error::Numerical(
            "singular normal equations; set a ridge penalty > 0".into(),
        )
    } else {
        Error::Numerical(format!(
            "normal equations are numerically singular at ridge penalty {lambda}; increase it"
        ))
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log(1 + e^z)`.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn logistic_objective(design: &[f64], p: usize, y: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let n = y.len() as f64;
    let loss: f64 = design
        .chunks_exact(p)
        .zip(y)
        .map(|(row, &yi)| {
            let z = dot(row, beta);
            softplus(z) - yi * z
        })
        .sum::<f64>()
        / n;
    loss + 0.5 * lambda * beta[1..].iter().map(|b| b * b).sum::<f64>()
}

/// Damped Newton iterations for `mean log-loss + (λ/2)‖β₋₀‖²`.
pub fn ridge_logistic(design: &[f64], p: usize, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let n = y.len();
    let inv_n = 1.0 / n as f64;
    let ybar = y.iter().sum::<f64>() * inv_n;
    let clipped = ybar.clamp(1e-6, 1.0 - 1e-6);
    let mut beta = vec![0.0; p];
    beta[0] = (clipped / (1.0 - clipped)).ln();
    let mut obj = logistic_objective(design, p, y, &beta, lambda);

    for _ in 0..100 {
        let mut hess = DMatrix::<f64>::zeros(p, p);
        let mut grad = DVector::<f64>::zeros(p);
        for (row, &yi) in design.chunks_exact(p).zip(y) {
            let mu = sigmoid(dot(row, &beta));
            let w = (mu * (1.0 - mu)).max(1e-12);
            let r = mu - yi;
            for j in 0..p {
                let rj = row[j];
                grad[j] += rj * r;
                let wr = w * rj;
                for k in j..p {
                    hess[(j, k)] += wr * row[k];
                }
            }
        }
        for j in 0..p {
            grad[j] *= inv_n;
            for k in j..p {
                let v = hess[(j, k)] * inv_n;
                hess[(j, k)] = v;
                hess[(k, j)] = v;
            }
            if j > 0 {
                grad[j] += lambda * beta[j];
                hess[(j, j)] += lambda;
            }
        }
        let step = solve_spd(hess, grad.clone(), lambda)?;
        let decrement: f64 = step.iter().zip(grad.iter()).map(|(s, g)| s * g).sum();

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b - t * s).collect();
            let cand_obj = logistic_objective(design, p, y, &cand, lambda);
            if cand_obj <= obj - 1e-4 * t * decrement || cand_obj <= obj {
                beta = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || decrement.abs() < 1e-14 {
            break;
        }
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Numerical("logistic fit diverged".into()));
    }
    Ok(beta)
}

pub fn logistic_prob(eta: f64) -> f64 {
    sigmoid(eta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_line() {
        // y = 1 + 2 t
        let ts: Vec<f64> = (0..10).map(|i| i as f64 / 3.0).collect();
        let design: Vec<f64> = ts.iter().flat_map(|&t| [1.0, t]).collect();
        let y: Vec<f64> = ts.iter().map(|t| 1.0 + 2.0 * t).collect();
        let beta = ridge_least_squares(&design, 2, &y, 0.0).unwrap();
        assert!((beta[0] - 1.0).abs() < 1e-10);
        assert!((beta[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn singular_without_ridge_is_reported() {
        let design: Vec<f64> = (0..10).flat_map(|_| [1.0, 0.0]).collect();
        let y = vec![1.0; 10];
        let err = ridge_least_squares(&design, 2, &y, 0.0).unwrap_err();
        assert!(err.to_string().contains("ridge"));
        let beta = ridge_least_squares(&design, 2, &y, 1e-3).unwrap();
        assert!((beta[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn logistic_matches_group_frequencies() {
        // two groups with frequencies 0.2 and 0.7: saturated model reproduces them
        let mut design = Vec::new();
        let mut y = Vec::new();
        for i in 0..100 {
            let g = (i % 2) as f64;
            design.extend_from_slice(&[1.0, g]);
            let k = i / 2;
            let yi = if g == 0.0 { (k % 5 == 0) as u8 } else { (k % 10 < 7) as u8 };
            y.push(yi as f64);
        }
        let beta = ridge_logistic(&design, 2, &y, 0.0).unwrap();
        assert!((logistic_prob(beta[0]) - 0.2).abs() < 1e-8);
        assert!((logistic_prob(beta[0] + beta[1]) - 0.7).abs() < 1e-8);
    }
}
