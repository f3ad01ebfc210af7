//! Influence of each surrogate point on a held-out validation loss, and
//! influence-driven subsampling of the surrogate set.
//!
//! The local model is the soft-label logistic fit on the train split,
//! L(θ) = Σ_train CE_i(θ) + λ‖φ‖². For a point with loss gradient g_i the
//! first-order change in mean validation loss when the point is removed is
//! ρ_i = ḡ_valᵀ H⁻¹ g_i, with H the Hessian of L at θ̂.

use std::fmt;
use std::str::FromStr;

use log::info;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ClimaxError, Result};
use crate::explainers::logistic::{CeBudget, SoftLogistic};
use crate::linalg::spd_factor;
use crate::surrogate::SurrogateSet;
use crate::util::{derive_seed, rng_from_seed, std_dev};

/// Condition number above which influence scores are refused.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsampleMode {
    /// Keep the highest-ρ points of each class.
    Deterministic,
    /// Draw points of each class without replacement with probability ψ.
    Stochastic,
}

impl SubsampleMode {
    pub fn name(self) -> &'static str {
        match self {
            SubsampleMode::Deterministic => "deterministic",
            SubsampleMode::Stochastic => "stochastic",
        }
    }
}

impl fmt::Display for SubsampleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SubsampleMode {
    type Err = ClimaxError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(SubsampleMode::Deterministic),
            "stochastic" => Ok(SubsampleMode::Stochastic),
            other => Err(ClimaxError::Config(format!("unknown subsample mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceConfig {
    /// Fraction q of each class to keep.
    pub keep_fraction: f64,
    pub val_fraction: f64,
    pub mode: SubsampleMode,
    /// Softmax temperature for ψ; `None` uses the standard deviation of ρ.
    pub temperature: Option<f64>,
    /// L2 strength of the local model used for scoring.
    pub lambda: f64,
    pub budget: CeBudget,
}

impl Default for InfluenceConfig {
    fn default() -> Self {
        InfluenceConfig {
            keep_fraction: 0.7,
            val_fraction: 0.2,
            mode: SubsampleMode::Deterministic,
            temperature: None,
            lambda: 0.1,
            budget: CeBudget::default(),
        }
    }
}

impl InfluenceConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ClimaxError::Config(m));
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return bad(format!("keep fraction must lie in (0, 1], got {}", self.keep_fraction));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction <= 0.5) {
            return bad(format!("validation fraction must lie in (0, 0.5], got {}", self.val_fraction));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return bad(format!("influence lambda must be > 0, got {}", self.lambda));
        }
        if let Some(t) = self.temperature {
            if !(t > 0.0) {
                return bad(format!("temperature must be > 0, got {t}"));
            }
        }
        Ok(())
    }
}

/// The local logistic model fitted on the train split, with per-point
/// gradients and the Hessian cached at θ̂.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFitState {
    /// θ̂ = [b, φ_1, …, φ_d].
    pub theta: Vec<f64>,
    /// Loss gradients g_i at θ̂ for every surrogate row.
    pub gradients: Vec<Vec<f64>>,
    /// Hessian of the mean-form objective L(θ)/n_train at θ̂.
    pub hessian: DMatrix<f64>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub targets: Vec<f64>,
    pub lambda: f64,
    pub converged: bool,
    pub grad_norm: f64,
}

impl LocalFitState {
    pub fn n_train(&self) -> usize {
        self.train.len()
    }

    /// Hessian of the summed objective.
    pub fn hessian_sum(&self) -> DMatrix<f64> {
        &self.hessian * self.n_train() as f64
    }

    /// Mean gradient over the validation split.
    pub fn validation_gradient(&self) -> Vec<f64> {
        let p = self.theta.len();
        let mut g = vec![0.0; p];
        for &i in &self.validation {
            for (a, b) in g.iter_mut().zip(&self.gradients[i]) {
                *a += b;
            }
        }
        let n = self.validation.len() as f64;
        g.iter_mut().for_each(|v| *v /= n);
        g
    }
}

/// Soft-label logistic problem over all columns of `s` for the given rows.
pub fn local_problem<'a>(
    s: &'a SurrogateSet,
    cols: &'a [usize],
    rows: &'a [usize],
    targets: &'a [f64],
    lambda: f64,
) -> SoftLogistic<'a> {
    SoftLogistic { design: &s.design, cols, rows, targets, lambda }
}

/// Splits `n` rows into (train, validation) by a seeded shuffle.
pub fn split_rows(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let n_val = ((val_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Fits the local logistic model on a seeded train split of `s`.
pub fn fit_full(
    s: &SurrogateSet,
    target: usize,
    lambda: f64,
    val_fraction: f64,
    budget: &CeBudget,
    seed: u64,
) -> Result<LocalFitState> {
    let n = s.len();
    if n < 10 {
        return Err(ClimaxError::InsufficientData(format!("influence needs at least 10 surrogate rows, got {n}")));
    }
    if !(lambda > 0.0) {
        return Err(ClimaxError::Config(format!("influence lambda must be > 0, got {lambda}")));
    }
    if !(val_fraction > 0.0 && val_fraction <= 0.5) {
        return Err(ClimaxError::Config(format!("validation fraction must lie in (0, 0.5], got {val_fraction}")));
    }
    if target >= s.n_classes() {
        return Err(ClimaxError::Config(format!("target class {target} out of range")));
    }
    let (train, validation) = split_rows(n, val_fraction, seed);
    let targets = s.target_probs(target);
    let cols: Vec<usize> = (0..s.n_features()).collect();
    let lr = local_problem(s, &cols, &train, &targets, lambda);
    let fit = lr.fit(budget);
    if !fit.converged {
        info!("influence model did not converge (gradient norm {:.3e})", fit.grad_norm);
    }
    let all: Vec<usize> = (0..n).collect();
    let gradients = all.iter().map(|&i| lr.point_gradient(&fit.theta, i)).collect();
    let hessian = lr.hessian(&fit.theta) / train.len() as f64;
    Ok(LocalFitState {
        theta: fit.theta,
        gradients,
        hessian,
        train,
        validation,
        targets,
        lambda,
        converged: fit.converged,
        grad_norm: fit.grad_norm,
    })
}

/// Spectral condition number of a symmetric matrix.
pub fn condition_number(h: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(h.clone());
    let max = eig.eigenvalues.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// ρ_i = ḡ_valᵀ H⁻¹ g_i for every surrogate row (validation rows included).
pub fn influence_scores(state: &LocalFitState) -> Result<Vec<f64>> {
    let h = state.hessian_sum();
    let cond = condition_number(&h);
    if !(cond <= MAX_CONDITION) {
        return Err(ClimaxError::IllConditioned(cond));
    }
    let chol = spd_factor(h)?;
    let gv = state.validation_gradient();
    let v = chol.solve(&DVector::from_vec(gv));
    Ok(state.gradients.iter().map(|g| g.iter().zip(v.iter()).map(|(a, b)| a * b).sum()).collect())
}

/// ψ = softmax(ρ/τ).
pub fn sampling_probabilities(rho: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(ClimaxError::Config(format!("temperature must be > 0, got {temperature}")));
    }
    if rho.iter().any(|r| !r.is_finite()) {
        return Err(ClimaxError::Config("influence values must be finite".into()));
    }
    let m = rho.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = rho.iter().map(|r| ((r - m) / temperature).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / z).collect())
}

/// Default temperature: the standard deviation of ρ (1 when ρ is constant).
pub fn default_temperature(rho: &[f64]) -> f64 {
    let sd = std_dev(rho);
    if sd > 0.0 && sd.is_finite() {
        sd
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceResult {
    pub rho: Vec<f64>,
    pub psi: Vec<f64>,
    pub keep: Vec<bool>,
    pub kept_count: usize,
    pub theta_hat: Vec<f64>,
    /// Parameters refitted on the kept rows.
    pub theta_tilde: Vec<f64>,
    pub converged: bool,
}

impl InfluenceResult {
    pub fn kept_rows(&self) -> Vec<usize> {
        (0..self.keep.len()).filter(|&i| self.keep[i]).collect()
    }
}

/// Number of rows kept from a class of size `n_c`: ⌈q·n_c⌉, raised to 2
/// when the class has at least two rows.
pub fn class_quota(q: f64, n_c: usize) -> usize {
    let m = (q * n_c as f64).ceil() as usize;
    m.max(n_c.min(2)).min(n_c)
}

fn choose_rows<R: Rng>(members: &[usize], m: usize, rho: &[f64], psi: &[f64], mode: SubsampleMode, rng: &mut R) -> Vec<usize> {
    let mut ranked: Vec<(usize, f64)> = match mode {
        SubsampleMode::Deterministic => members.iter().map(|&i| (i, rho[i])).collect(),
        // weighted sampling without replacement via exponential keys
        SubsampleMode::Stochastic => members
            .iter()
            .map(|&i| {
                let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                (i, u.ln() / psi[i].max(f64::MIN_POSITIVE))
            })
            .collect(),
    };
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(m).map(|(i, _)| i).collect()
}

/// Keeps ⌈q·n_c⌉ rows of every class (by ρ or by sampling with ψ) and
/// refits the local model on the kept rows.
pub fn subsample_and_refit(
    s: &SurrogateSet,
    state: &LocalFitState,
    rho: &[f64],
    psi: &[f64],
    q: f64,
    mode: SubsampleMode,
    budget: &CeBudget,
    seed: u64,
) -> Result<(SurrogateSet, InfluenceResult)> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(ClimaxError::Config(format!("keep fraction must lie in (0, 1], got {q}")));
    }
    let n = s.len();
    if rho.len() != n || psi.len() != n {
        return Err(ClimaxError::Dimension { expected: n, actual: rho.len().min(psi.len()) });
    }
    let mut rng = rng_from_seed(seed);
    let mut keep = vec![false; n];
    for class in 0..s.n_classes() {
        let members: Vec<usize> = (0..n).filter(|&i| s.hard_labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        let m = class_quota(q, members.len());
        if m > (q * members.len() as f64).ceil() as usize {
            info!("class {class}: keeping {m} rows instead of the quota");
        }
        for i in choose_rows(&members, m, rho, psi, mode, &mut rng) {
            keep[i] = true;
        }
    }
    let rows: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    let d = s.n_features();
    if rows.len() < d + 2 {
        return Err(ClimaxError::InsufficientData(format!(
            "subsample keeps {} rows but the local model needs at least {}",
            rows.len(),
            d + 2
        )));
    }
    let cols: Vec<usize> = (0..d).collect();
    let lr = local_problem(s, &cols, &rows, &state.targets, state.lambda);
    let refit = lr.fit_from(state.theta.clone(), budget);
    let reduced = s.select_rows(&rows);
    Ok((
        reduced,
        InfluenceResult {
            rho: rho.to_vec(),
            psi: psi.to_vec(),
            kept_count: rows.len(),
            keep,
            theta_hat: state.theta.clone(),
            theta_tilde: refit.theta,
            converged: state.converged && refit.converged,
        },
    ))
}

/// Fit, score, convert to ψ and subsample in one step.
pub fn subsample_with_influence(
    s: &SurrogateSet,
    target: usize,
    cfg: &InfluenceConfig,
    seed: u64,
) -> Result<(SurrogateSet, InfluenceResult)> {
    cfg.validate()?;
    let state = fit_full(s, target, cfg.lambda, cfg.val_fraction, &cfg.budget, derive_seed(seed, 1))?;
    let rho = influence_scores(&state)?;
    let tau = cfg.temperature.unwrap_or_else(|| default_temperature(&rho));
    let psi = sampling_probabilities(&rho, tau)?;
    subsample_and_refit(s, &state, &rho, &psi, cfg.keep_fraction, cfg.mode, &cfg.budget, derive_seed(seed, 2))
}
