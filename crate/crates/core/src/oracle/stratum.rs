//! Exact solution of the per-stratum score optimization.
//!
//! Within a stratum the latent score takes a value `s_i ∈ [s0 − γ, s0 + γ]`
//! on each outcome atom, subject to `Σ pᵢ sᵢ = s0`. The objective
//! `Σ pᵢ (−sᵢ) yᵢ` is a fractional-knapsack LP: writing `sᵢ = s0 + γvᵢ`,
//! the maximum puts `v = −1` on the upper half of the outcome mass and
//! `v = +1` on the lower half, splitting the atom that straddles the median.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Max,
    Min,
}

/// A discrete conditional outcome law in one `(a, x)` stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumInstance {
    y_values: Vec<f64>,
    probs: Vec<f64>,
    s0: f64,
    gamma: f64,
}

impl StratumInstance {
    pub fn new(y_values: Vec<f64>, probs: Vec<f64>, s0: f64, gamma: f64) -> Result<Self> {
        if y_values.is_empty() || y_values.len() != probs.len() {
            return Err(Error::domain("support and probabilities must be non-empty and aligned"));
        }
        if y_values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::domain("support points must be strictly increasing"));
        }
        if probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::domain("probabilities must be nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("probabilities sum to {total}, not 1")));
        }
        if !(gamma >= 0.0) || !s0.is_finite() {
            return Err(Error::domain("gamma must be >= 0 and s0 finite"));
        }
        Ok(Self {
            y_values,
            probs,
            s0,
            gamma,
        })
    }

    /// Sorts atoms and merges equal support points before validating.
    pub fn from_atoms(atoms: &[(f64, f64)], s0: f64, gamma: f64) -> Result<Self> {
        let mut sorted = atoms.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut y: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut p: Vec<f64> = Vec::with_capacity(sorted.len());
        for (yi, pi) in sorted {
            if y.last() == Some(&yi) {
                *p.last_mut().unwrap() += pi;
            } else {
                y.push(yi);
                p.push(pi);
            }
        }
        Self::new(y, p, s0, gamma)
    }

    pub fn y_values(&self) -> &[f64] {
        &self.y_values
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn s0(&self) -> f64 {
        self.s0
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mean(&self) -> f64 {
        self.y_values.iter().zip(&self.probs).map(|(y, p)| y * p).sum()
    }

    /// Index of the first atom whose cumulative mass reaches 1/2.
    pub fn median_index(&self) -> usize {
        let mut cum = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            cum += p;
            if cum >= 0.5 {
                return i;
            }
        }
        self.probs.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratumSolution {
    pub s_star: Vec<f64>,
    pub objective: f64,
    pub split_point: f64,
    /// Share of the split atom's mass assigned to the low-outcome side.
    pub fractional_mass: f64,
}

/// Greedy solution on raw atoms (any order, duplicates allowed). `s_star`
/// follows the input order.
pub fn solve_atoms(
    y: &[f64],
    p: &[f64],
    s0: f64,
    gamma: f64,
    direction: Direction,
) -> StratumSolution {
    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    // high outcomes first
    order.sort_by(|&i, &j| y[j].total_cmp(&y[i]));
    let high_side_sign = match direction {
        Direction::Max => -1.0,
        Direction::Min => 1.0,
    };
    let mut v = vec![-high_side_sign; n];
    let mut remaining = 0.5;
    let mut split_point = y[order[0]];
    let mut fractional_mass = 0.0;
    for &i in &order {
        if remaining <= 0.0 {
            break;
        }
        let m = p[i];
        if m <= remaining {
            v[i] = high_side_sign;
            remaining -= m;
            if remaining <= 0.0 {
                split_point = y[i];
                fractional_mass = 0.0;
            }
        } else {
            let high = remaining;
            let low = m - high;
            v[i] = (high_side_sign * high - high_side_sign * low) / m;
            split_point = y[i];
            fractional_mass = low / m;
            remaining = 0.0;
        }
    }
    let s_star: Vec<f64> = v.iter().map(|vi| s0 + gamma * vi).collect();
    let objective = y
        .iter()
        .zip(p)
        .zip(&s_star)
        .map(|((yi, pi), si)| pi * (-si) * yi)
        .sum();
    StratumSolution {
        s_star,
        objective,
        split_point,
        fractional_mass,
    }
}

pub fn solve_stratum(inst: &StratumInstance, direction: Direction) -> StratumSolution {
    let sol = solve_atoms(&inst.y_values, &inst.probs, inst.s0, inst.gamma, direction);
    debug_assert!(
        (inst.probs.iter().zip(&sol.s_star).map(|(p, s)| p * s).sum::<f64>() - inst.s0).abs()
            < 1e-10 * (1.0 + inst.s0.abs() + inst.gamma)
    );
    sol
}

/// Closed-form binary value: `−s0·q ± γ·min(q, 1 − q)` for `Y ∈ {0, 1}`, `q = P(Y = 1)`.
pub fn binary_closed_form(q: f64, s0: f64, gamma: f64, direction: Direction) -> f64 {
    let corr = q.min(1.0 - q);
    match direction {
        Direction::Max => -s0 * q + gamma * corr,
        Direction::Min => -s0 * q - gamma * corr,
    }
}

/// `E[Y·sgn(Y − M)]` for the piecewise-uniform law that spreads each atom
/// over its cell (cell edges at midpoints between neighbouring atoms), with
/// `M` that law's median. Returns `(value, index of median cell)`.
pub fn histogram_median_correction(inst: &StratumInstance) -> (f64, usize) {
    let y = &inst.y_values;
    let p = &inst.probs;
    let n = y.len();
    if n == 1 {
        return (0.0, 0);
    }
    let edges: Vec<f64> = (0..=n)
        .map(|i| {
            if i == 0 {
                y[0] - 0.5 * (y[1] - y[0])
            } else if i == n {
                y[n - 1] + 0.5 * (y[n - 1] - y[n - 2])
            } else {
                0.5 * (y[i - 1] + y[i])
            }
        })
        .collect();
    let k = inst.median_index();
    let below: f64 = p[..k].iter().sum();
    let (lo, hi) = (edges[k], edges[k + 1]);
    let density = if p[k] > 0.0 { p[k] / (hi - lo) } else { 0.0 };
    let median = if density > 0.0 {
        lo + (0.5 - below) / density
    } else {
        lo
    };
    // ∫ y dF over [l, r] for a uniform cell
    let first_moment = |l: f64, r: f64, dens: f64| dens * 0.5 * (r * r - l * l);
    let mut value = 0.0;
    for i in 0..n {
        let (l, r) = (edges[i], edges[i + 1]);
        let dens = p[i] / (r - l);
        if i < k {
            value -= first_moment(l, r, dens);
        } else if i > k {
            value += first_moment(l, r, dens);
        } else {
            value += first_moment(median, r, dens) - first_moment(l, median, dens);
        }
    }
    (value, k)
}

/// Largest gap between the median atom and its neighbours.
pub fn local_spacing(inst: &StratumInstance, k: usize) -> f64 {
    let y = &inst.y_values;
    let left = if k > 0 { y[k] - y[k - 1] } else { 0.0 };
    let right = if k + 1 < y.len() { y[k + 1] - y[k] } else { 0.0 };
    left.max(right)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute force over LP vertices: at most one coordinate of `v` is
    /// fractional, the rest sit at ±1.
    fn vertex_enumeration(y: &[f64], p: &[f64], s0: f64, gamma: f64, dir: Direction) -> f64 {
        let n = y.len();
        let mut best = match dir {
            Direction::Max => f64::NEG_INFINITY,
            Direction::Min => f64::INFINITY,
        };
        for j in 0..n {
            for mask in 0..(1u32 << (n - 1)) {
                let mut v = vec![0.0; n];
                let mut bit = 0;
                let mut acc = 0.0;
                for i in 0..n {
                    if i == j {
                        continue;
                    }
                    v[i] = if mask >> bit & 1 == 1 { 1.0 } else { -1.0 };
                    bit += 1;
                    acc += p[i] * v[i];
                }
                if p[j] == 0.0 {
                    if acc.abs() > 1e-12 {
                        continue;
                    }
                } else {
                    v[j] = -acc / p[j];
                    if v[j].abs() > 1.0 + 1e-12 {
                        continue;
                    }
                }
                let obj: f64 = (0..n).map(|i| p[i] * -(s0 + gamma * v[i]) * y[i]).sum();
                best = match dir {
                    Direction::Max => best.max(obj),
                    Direction::Min => best.min(obj),
                };
            }
        }
        best
    }

    #[test]
    fn binary_example() {
        let inst = StratumInstance::new(vec![0.0, 1.0], vec![0.7, 0.3], 0.0, 1.0).unwrap();
        let sol = solve_stratum(&inst, Direction::Max);
        assert!((sol.objective - 0.3).abs() < 1e-15);
        assert!((binary_closed_form(0.3, 0.0, 1.0, Direction::Max) - 0.3).abs() < 1e-15);
        // the 1-dim feasible family v1 ∈ [−1, 1], v0 = −0.3 v1 / 0.7
        let brute = (0..=20_000)
            .map(|i| -1.0 + i as f64 / 10_000.0)
            .filter(|v1| (0.3 * v1 / 0.7).abs() <= 1.0)
            .map(|v1| -0.3 * v1)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((brute - 0.3).abs() < 1e-12);
    }

    #[test]
    fn four_point_uniform() {
        let inst =
            StratumInstance::new(vec![1.0, 2.0, 3.0, 4.0], vec![0.25; 4], 0.0, 1.0).unwrap();
        let sol = solve_stratum(&inst, Direction::Max);
        assert!((sol.objective - 1.0).abs() < 1e-15);
        let (closed, _) = histogram_median_correction(&inst);
        assert!((closed - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_gamma_collapses() {
        let inst = StratumInstance::new(vec![-1.0, 0.5, 2.0], vec![0.2, 0.5, 0.3], 0.7, 0.0)
            .unwrap();
        for dir in [Direction::Max, Direction::Min] {
            let sol = solve_stratum(&inst, dir);
            assert!(sol.s_star.iter().all(|&s| s == 0.7));
            assert!((sol.objective - (-0.7 * inst.mean())).abs() < 1e-15);
        }
    }

    #[test]
    fn feasibility_and_fraction() {
        let inst = StratumInstance::new(vec![0.0, 1.0, 5.0], vec![0.2, 0.6, 0.2], -0.4, 0.9)
            .unwrap();
        let sol = solve_stratum(&inst, Direction::Max);
        let mean_s: f64 = inst.probs().iter().zip(&sol.s_star).map(|(p, s)| p * s).sum();
        assert!((mean_s - inst.s0()).abs() < 1e-12);
        assert_eq!(sol.split_point, 1.0);
        // 0.3 of the middle atom goes high, 0.3 low
        assert!((sol.fractional_mass - 0.5).abs() < 1e-12);
        for s in &sol.s_star {
            assert!(*s >= inst.s0() - inst.gamma() - 1e-12 && *s <= inst.s0() + inst.gamma() + 1e-12);
        }
    }

    #[test]
    fn greedy_matches_vertex_enumeration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let n = rng.random_range(1..=7);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let mut p: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
            let total: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= total);
            let s0 = rng.random_range(-2.0..2.0);
            let gamma = rng.random_range(0.0..2.0);
            for dir in [Direction::Max, Direction::Min] {
                let greedy = solve_atoms(&y, &p, s0, gamma, dir).objective;
                let brute = vertex_enumeration(&y, &p, s0, gamma, dir);
                assert!((greedy - brute).abs() < 1e-10, "{greedy} vs {brute}");
            }
        }
    }

    #[test]
    fn rejects_invalid_instances() {
        assert!(StratumInstance::new(vec![1.0, 1.0], vec![0.5, 0.5], 0.0, 1.0).is_err());
        assert!(StratumInstance::new(vec![0.0, 1.0], vec![0.5, 0.6], 0.0, 1.0).is_err());
        assert!(StratumInstance::new(vec![0.0, 1.0], vec![0.5, 0.5], 0.0, -1.0).is_err());
    }
}
