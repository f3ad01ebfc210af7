//! Soft-label logistic regression: minimizes
//! Σ_i CE(t_i, σ(b + φᵀx_i)) + λ‖φ‖² with an unpenalized intercept.
//!
//! Parameters are laid out as θ = [b, φ_1, …, φ_p].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::spd_factor;
use crate::util::{sigmoid, soft_cross_entropy};

/// Iteration budget for the cross-entropy fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CeBudget {
    pub max_iter: usize,
    /// Converged once the gradient's ∞-norm drops below this.
    pub grad_tol: f64,
}

impl Default for CeBudget {
    fn default() -> Self {
        CeBudget { max_iter: 100, grad_tol: 1e-8 }
    }
}

/// Design restricted to a row subset and a column subset.
#[derive(Clone, Copy)]
pub struct SoftLogistic<'a> {
    pub design: &'a DMatrix<f64>,
    pub cols: &'a [usize],
    pub rows: &'a [usize],
    pub targets: &'a [f64],
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub theta: Vec<f64>,
    pub loss: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// (objective, ‖φ‖) after every accepted step, starting from θ = 0.
    pub history: Vec<(f64, f64)>,
}

impl SoftLogistic<'_> {
    pub fn n_params(&self) -> usize {
        self.cols.len() + 1
    }

    /// Augmented feature vector [1, x_cols] of design row `i`.
    pub fn augmented(&self, i: usize) -> Vec<f64> {
        let mut a = Vec::with_capacity(self.n_params());
        a.push(1.0);
        a.extend(self.cols.iter().map(|&c| self.design[(i, c)]));
        a
    }

    pub fn linear(&self, theta: &[f64], i: usize) -> f64 {
        theta[0] + self.cols.iter().zip(&theta[1..]).map(|(&c, w)| self.design[(i, c)] * w).sum::<f64>()
    }

    fn penalty(&self, theta: &[f64]) -> f64 {
        self.lambda * theta[1..].iter().map(|w| w * w).sum::<f64>()
    }

    /// Cross-entropy of row `i` (no penalty).
    pub fn point_loss(&self, theta: &[f64], i: usize) -> f64 {
        soft_cross_entropy(self.targets[i], self.linear(theta, i))
    }

    /// ∇_θ of the cross-entropy of row `i`: (σ − t)·[1, x].
    pub fn point_gradient(&self, theta: &[f64], i: usize) -> Vec<f64> {
        let r = sigmoid(self.linear(theta, i)) - self.targets[i];
        self.augmented(i).into_iter().map(|a| a * r).collect()
    }

    pub fn objective(&self, theta: &[f64]) -> f64 {
        self.rows.iter().map(|&i| self.point_loss(theta, i)).sum::<f64>() + self.penalty(theta)
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n_params()];
        for &i in self.rows {
            for (gk, pk) in g.iter_mut().zip(self.point_gradient(theta, i)) {
                *gk += pk;
            }
        }
        for k in 1..g.len() {
            g[k] += 2.0 * self.lambda * theta[k];
        }
        g
    }

    /// Hessian of the full (summed, penalized) objective.
    pub fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let p = self.n_params();
        let mut h = DMatrix::zeros(p, p);
        for &i in self.rows {
            let s = sigmoid(self.linear(theta, i));
            let w = s * (1.0 - s);
            let a = self.augmented(i);
            for r in 0..p {
                let war = w * a[r];
                for c in 0..=r {
                    h[(r, c)] += war * a[c];
                }
            }
        }
        for r in 0..p {
            for c in 0..r {
                h[(c, r)] = h[(r, c)];
            }
        }
        for k in 1..p {
            h[(k, k)] += 2.0 * self.lambda;
        }
        h
    }

    /// Damped Newton with backtracking; falls back to a gradient step when
    /// the Hessian cannot be factored. Every accepted step lowers the
    /// objective, except near the optimum where a full step whose change is
    /// below rounding resolution is taken if it shrinks the gradient.
    pub fn fit(&self, budget: &CeBudget) -> LogisticFit {
        self.fit_from(vec![0.0; self.n_params()], budget)
    }

    pub fn fit_from(&self, mut theta: Vec<f64>, budget: &CeBudget) -> LogisticFit {
        let mut f = self.objective(&theta);
        let mut history = vec![(f, phi_norm(&theta))];
        let mut g = self.gradient(&theta);
        let mut iterations = 0;
        let inf_norm = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        while inf_norm(&g) >= budget.grad_tol && iterations < budget.max_iter {
            iterations += 1;
            let dir = self.newton_direction(&theta, &g).unwrap_or_else(|| g.iter().map(|v| -v).collect());
            let Some((next, fnext)) = self.line_search(&theta, f, &g, &dir).or_else(|| {
                let steep: Vec<f64> = g.iter().map(|v| -v).collect();
                self.line_search(&theta, f, &g, &steep)
            }) else {
                break;
            };
            theta = next;
            f = fnext;
            g = self.gradient(&theta);
            history.push((f, phi_norm(&theta)));
        }
        let grad_norm = inf_norm(&g);
        LogisticFit { theta, loss: f, grad_norm, iterations, converged: grad_norm < budget.grad_tol, history }
    }

    fn newton_direction(&self, theta: &[f64], g: &[f64]) -> Option<Vec<f64>> {
        let h = self.hessian(theta);
        let rhs = DVector::from_iterator(g.len(), g.iter().map(|v| -v));
        let scale = (0..h.nrows()).map(|i| h[(i, i)]).fold(0.0, f64::max).max(1e-300);
        // Levenberg damping when the plain Hessian is (numerically) singular
        for damping in [0.0, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2] {
            let mut hd = h.clone();
            for i in 0..hd.nrows() {
                hd[(i, i)] += damping * scale;
            }
            if let Ok(chol) = spd_factor(hd) {
                let d: Vec<f64> = chol.solve(&rhs).iter().copied().collect();
                if d.iter().all(|v| v.is_finite()) {
                    return Some(d);
                }
            }
        }
        None
    }

    fn line_search(&self, theta: &[f64], f: f64, g: &[f64], dir: &[f64]) -> Option<(Vec<f64>, f64)> {
        let slope: f64 = g.iter().zip(dir).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            return None;
        }
        let mut step = 1.0;
        for attempt in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(dir).map(|(t, d)| t + step * d).collect();
            let fc = self.objective(&cand);
            if fc <= f + 1e-4 * step * slope {
                return Some((cand, fc));
            }
            if attempt == 0 && fc - f <= 1e-12 * f.abs().max(1.0) && sq_norm(&self.gradient(&cand)) < sq_norm(g) {
                return Some((cand, fc));
            }
            step *= 0.5;
        }
        None
    }
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn phi_norm(theta: &[f64]) -> f64 {
    theta[1..].iter().map(|w| w * w).sum::<f64>().sqrt()
}
