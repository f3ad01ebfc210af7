//! Local explainers: LIME's weighted ridge, the log-odds ridge (L-CLIMAX) and
//! the soft-label logistic fit (CE-CLIMAX), plus forward feature selection
//! and the end-to-end pipeline.

mod document;
pub mod logistic;
mod pipeline;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ClimaxError, Result};
use crate::influence::InfluenceConfig;
use crate::linalg::weighted_ridge;
use crate::surrogate::{KernelConfig, SurrogateSet};

pub use document::explanation_document;
pub use logistic::{CeBudget, LogisticFit, SoftLogistic};
pub use pipeline::{explain, explain_with_surrogate, target_class_of};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Lime,
    LClimax,
    CeClimax,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Lime => "lime",
            Method::LClimax => "l-climax",
            Method::CeClimax => "ce-climax",
        }
    }

    pub fn default_lambda(self) -> f64 {
        match self {
            Method::Lime | Method::LClimax => 1.0,
            Method::CeClimax => 1e-3,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = ClimaxError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lime" => Ok(Method::Lime),
            "l-climax" => Ok(Method::LClimax),
            "ce-climax" => Ok(Method::CeClimax),
            other => Err(ClimaxError::Config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Balancer {
    None,
    Ros,
    Gmm,
}

impl Balancer {
    pub fn name(self) -> &'static str {
        match self {
            Balancer::None => "none",
            Balancer::Ros => "ros",
            Balancer::Gmm => "gmm",
        }
    }
}

impl fmt::Display for Balancer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Balancer {
    type Err = ClimaxError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Balancer::None),
            "ros" => Ok(Balancer::Ros),
            "gmm" => Ok(Balancer::Gmm),
            other => Err(ClimaxError::Config(format!("unknown balancer {other:?}"))),
        }
    }
}

/// Everything that determines one explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub method: Method,
    pub balancer: Balancer,
    /// Influence subsampling; `None` disables it.
    pub influence: Option<InfluenceConfig>,
    pub n_prime: usize,
    pub k: usize,
    /// Ridge / L2 strength; `None` uses the method default.
    pub lambda: Option<f64>,
    /// Probability clip ε for the log-odds transform.
    pub logit_clip: f64,
    pub ce_budget: CeBudget,
    /// `None` uses a Euclidean kernel of width 0.75·√d.
    pub kernel: Option<KernelConfig>,
    /// Mixture components for GMM balancing; `None` uses the class count.
    pub gmm_components: Option<usize>,
    pub seed: u64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            method: Method::CeClimax,
            balancer: Balancer::Gmm,
            influence: None,
            n_prime: 1000,
            k: 5,
            lambda: None,
            logit_clip: 1e-6,
            ce_budget: CeBudget::default(),
            kernel: None,
            gmm_components: None,
            seed: 0,
        }
    }
}

impl ExplainConfig {
    pub fn lime() -> Self {
        ExplainConfig { method: Method::Lime, balancer: Balancer::None, ..Default::default() }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or_else(|| self.method.default_lambda())
    }

    pub fn kernel_for(&self, d: usize) -> KernelConfig {
        self.kernel.unwrap_or_else(|| KernelConfig::default_for(d))
    }

    /// Short label such as `ce-climax+gmm+if`.
    pub fn label(&self) -> String {
        let mut s = self.method.name().to_string();
        if self.balancer != Balancer::None {
            s.push('+');
            s.push_str(self.balancer.name());
        }
        if self.influence.is_some() {
            s.push_str("+if");
        }
        s
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let bad = |m: String| Err(ClimaxError::Config(m));
        if self.k == 0 || self.k > d {
            return bad(format!("k must lie in 1..={d}, got {}", self.k));
        }
        if self.n_prime < 2 {
            return bad(format!("n_prime must be at least 2, got {}", self.n_prime));
        }
        let lambda = self.lambda();
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return bad(format!("lambda must be >= 0, got {lambda}"));
        }
        if !(self.logit_clip > 0.0 && self.logit_clip < 0.5) {
            return bad(format!("logit clip must lie in (0, 0.5), got {}", self.logit_clip));
        }
        if let Some(k) = &self.kernel {
            k.validate()?;
        }
        if let Some(inf) = &self.influence {
            inf.validate()?;
        }
        if self.gmm_components == Some(0) {
            return bad("gmm components must be >= 1".into());
        }
        Ok(())
    }
}

/// log(p′/(1−p′)) with p′ = clamp(p, ε, 1−ε).
pub fn logit_transform(p: f64, eps: f64) -> f64 {
    // work on the smaller tail so that clipping is exactly antisymmetric
    let lo = p.min(1.0 - p).max(eps);
    let v = (lo / (1.0 - lo)).ln();
    if p > 0.5 {
        -v
    } else {
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// A fitted local model: coefficients over all d features (zero for columns
/// left out of the fit) and an unpenalized intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalFit {
    pub phi: Vec<f64>,
    pub intercept: f64,
    pub diagnostics: FitDiagnostics,
}

impl LocalFit {
    /// Linear score b + φᵀu for a design row.
    pub fn score(&self, u: &[f64]) -> f64 {
        self.intercept + self.phi.iter().zip(u).map(|(a, b)| a * b).sum::<f64>()
    }
}

fn all_columns(s: &SurrogateSet) -> Vec<usize> {
    (0..s.n_features()).collect()
}

fn check_target(s: &SurrogateSet, target: usize) -> Result<()> {
    if s.is_empty() {
        return Err(ClimaxError::InsufficientData("empty surrogate set".into()));
    }
    if target >= s.n_classes() {
        return Err(ClimaxError::Config(format!("target class {target} but only {} classes", s.n_classes())));
    }
    Ok(())
}

fn ridge_fit(s: &SurrogateSet, response: &[f64], lambda: f64, cols: &[usize]) -> Result<LocalFit> {
    let fit = weighted_ridge(&s.design, response, &s.weights, lambda, true, cols)?;
    let mut phi = vec![0.0; s.n_features()];
    for (&c, v) in cols.iter().zip(&fit.coef) {
        phi[c] = *v;
    }
    let penalty: f64 = lambda * fit.coef.iter().map(|v| v * v).sum::<f64>();
    Ok(LocalFit {
        phi,
        intercept: fit.intercept,
        diagnostics: FitDiagnostics { loss: fit.rss + penalty, iterations: 1, converged: true },
    })
}

pub(crate) fn fit_lime_on(s: &SurrogateSet, target: usize, lambda: f64, cols: &[usize]) -> Result<LocalFit> {
    check_target(s, target)?;
    ridge_fit(s, &s.target_probs(target), lambda, cols)
}

pub(crate) fn log_odds_response(s: &SurrogateSet, target: usize, eps: f64) -> Vec<f64> {
    s.target_probs(target).into_iter().map(|p| logit_transform(p, eps)).collect()
}

pub(crate) fn fit_l_climax_on(
    s: &SurrogateSet,
    target: usize,
    lambda: f64,
    eps: f64,
    cols: &[usize],
) -> Result<LocalFit> {
    check_target(s, target)?;
    ridge_fit(s, &log_odds_response(s, target, eps), lambda, cols)
}

pub(crate) fn fit_ce_climax_on(
    s: &SurrogateSet,
    target: usize,
    lambda: f64,
    budget: &CeBudget,
    cols: &[usize],
) -> Result<LocalFit> {
    check_target(s, target)?;
    if !(lambda >= 0.0) {
        return Err(ClimaxError::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    let targets = s.target_probs(target);
    let rows: Vec<usize> = (0..s.len()).collect();
    let lr = SoftLogistic { design: &s.design, cols, rows: &rows, targets: &targets, lambda };
    let fit = lr.fit(budget);
    let mut phi = vec![0.0; s.n_features()];
    for (&c, v) in cols.iter().zip(&fit.theta[1..]) {
        phi[c] = *v;
    }
    Ok(LocalFit {
        phi,
        intercept: fit.theta[0],
        diagnostics: FitDiagnostics { loss: fit.loss, iterations: fit.iterations, converged: fit.converged },
    })
}

/// LIME: weighted ridge on the target-class probabilities,
/// argmin Σ π_i (y_i − b − φᵀz_i)² + λ‖φ‖².
pub fn fit_lime(s: &SurrogateSet, target: usize, lambda: f64) -> Result<LocalFit> {
    fit_lime_on(s, target, lambda, &all_columns(s))
}

/// L-CLIMAX: weighted ridge on the clipped log-odds of the target class.
pub fn fit_l_climax(s: &SurrogateSet, target: usize, lambda: f64, eps: f64) -> Result<LocalFit> {
    fit_l_climax_on(s, target, lambda, eps, &all_columns(s))
}

/// CE-CLIMAX: unweighted soft-label cross-entropy with L2 penalty. A fit that
/// runs out of budget is returned with `converged = false`.
pub fn fit_ce_climax(s: &SurrogateSet, target: usize, lambda: f64, budget: &CeBudget) -> Result<LocalFit> {
    fit_ce_climax_on(s, target, lambda, budget, &all_columns(s))
}

/// Greedy forward selection: repeatedly adds the column whose inclusion gives
/// the smallest weighted ridge residual. Returns `k` columns in the order
/// they were chosen; ties go to the lower index.
pub fn forward_select(
    design: &DMatrix<f64>,
    response: &[f64],
    weights: &[f64],
    k: usize,
    lambda: f64,
) -> Result<Vec<usize>> {
    let d = design.ncols();
    if k == 0 || k > d {
        return Err(ClimaxError::Config(format!("k must lie in 1..={d}, got {k}")));
    }
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut trial: Vec<usize> = Vec::with_capacity(k);
    while chosen.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..d {
            if chosen.contains(&j) {
                continue;
            }
            trial.clear();
            trial.extend_from_slice(&chosen);
            trial.push(j);
            let rss = match weighted_ridge(design, response, weights, lambda, true, &trial) {
                Ok(fit) => fit.rss,
                Err(ClimaxError::SingularSystem) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            if best.is_none_or(|(_, b)| rss < b) {
                best = Some((j, rss));
            }
        }
        chosen.push(best.expect("a candidate column remains").0);
    }
    Ok(chosen)
}

/// One reported feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub index: usize,
    pub name: String,
    pub score: f64,
}

/// Sizes and class counts of the surrogate set at each pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateDiagnostics {
    pub perturbation_scale: f64,
    pub n_initial: usize,
    pub class_counts_initial: Vec<usize>,
    pub n_balanced: usize,
    pub class_counts_balanced: Vec<usize>,
    pub n_final: usize,
    pub class_counts_final: Vec<usize>,
    /// Set when GMM balancing had to fall back to random oversampling.
    pub balance_fallback: bool,
}

/// The result of explaining one index sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    /// Attribution per feature; zero outside the selected features.
    pub phi: Vec<f64>,
    pub intercept: f64,
    /// Selected features by descending |score| (ascending index on ties).
    pub top_features: Vec<FeatureScore>,
    pub target_class: usize,
    pub contrast_classes: Vec<usize>,
    pub config: ExplainConfig,
    pub surrogate: SurrogateDiagnostics,
    pub fit: FitDiagnostics,
}

impl Explanation {
    pub fn top_indices(&self) -> Vec<usize> {
        self.top_features.iter().map(|f| f.index).collect()
    }

    pub fn with_feature_names(mut self, names: &[String]) -> Self {
        for f in &mut self.top_features {
            if let Some(n) = names.get(f.index) {
                f.name = n.clone();
            }
        }
        self
    }

    /// Explanation document: fixed field order, floats at 17 significant digits.
    pub fn to_document(&self) -> String {
        explanation_document(self)
    }
}

/// Orders `selected` by descending |φ|, ascending index on ties.
pub fn rank_features(phi: &[f64], selected: &[usize]) -> Vec<FeatureScore> {
    let mut idx = selected.to_vec();
    idx.sort_by(|&a, &b| phi[b].abs().total_cmp(&phi[a].abs()).then(a.cmp(&b)));
    idx.into_iter().map(|j| FeatureScore { index: j, name: format!("x{j}"), score: phi[j] }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::{FeatureStats, Provenance};

    pub(crate) fn set_from(z: DMatrix<f64>, p1: &[f64], weights: &[f64]) -> SurrogateSet {
        let n = z.nrows();
        let d = z.ncols();
        let probs = DMatrix::from_fn(n, 2, |i, j| if j == 1 { p1[i] } else { 1.0 - p1[i] });
        let stats = FeatureStats::identity(d);
        SurrogateSet {
            design: z.clone(),
            z,
            hard_labels: (0..n).map(|i| usize::from(p1[i] > 0.5)).collect(),
            probs,
            weights: weights.to_vec(),
            index_sample: vec![0.0; d],
            provenance: vec![Provenance::Bootstrap; n],
            held_constant: vec![],
            stats,
            kernel: KernelConfig::euclidean(1.0),
        }
    }

    #[test]
    fn logit_values() {
        assert_eq!(logit_transform(0.5, 1e-6), 0.0);
        assert!((logit_transform(0.880797, 1e-6) - 2.0).abs() < 1e-5);
        let expected = ((1.0 - 1e-6) / 1e-6f64).ln();
        assert!((logit_transform(1.0, 1e-6) - expected).abs() < 1e-9);
        assert!((expected - 13.815509).abs() < 1e-6);
        assert_eq!(logit_transform(0.0, 1e-6), -logit_transform(1.0, 1e-6));
    }

    #[test]
    fn lime_zero_response_gives_zero() {
        let z = DMatrix::from_fn(6, 2, |i, j| (i + j) as f64);
        let s = set_from(z, &[0.0; 6], &[1.0; 6]);
        let fit = fit_lime(&s, 1, 1.0).unwrap();
        assert!(fit.phi.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn lime_far_samples_are_dominated_by_the_penalty() {
        let z = DMatrix::from_fn(6, 2, |i, j| (i * (j + 1)) as f64);
        let p: Vec<f64> = (0..6).map(|i| i as f64 / 6.0).collect();
        let s = set_from(z, &p, &[1e-12; 6]);
        let fit = fit_lime(&s, 1, 1.0).unwrap();
        assert!(fit.phi.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn lime_without_penalty_on_constant_column_is_singular() {
        let z = DMatrix::from_element(4, 1, 1.0);
        let s = set_from(z, &[0.9; 4], &[1.0; 4]);
        assert!(matches!(fit_lime(&s, 1, 0.0), Err(ClimaxError::SingularSystem)));
        // with an intercept the constant column carries nothing
        let fit = fit_lime(&s, 1, 1.0).unwrap();
        assert!(fit.phi[0].abs() < 1e-15);
        assert!((fit.intercept - 0.9).abs() < 1e-12);
    }

    #[test]
    fn l_climax_recovers_exact_slope() {
        let z = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let p: Vec<f64> = [2.0, 4.0, 6.0].iter().map(|&l| crate::util::sigmoid(l)).collect();
        let s = set_from(z, &p, &[1.0; 3]);
        let fit = fit_l_climax(&s, 1, 0.0, 1e-6).unwrap();
        assert!((fit.phi[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn l_climax_zero_log_odds_and_heavy_shrinkage() {
        let z = DMatrix::from_fn(8, 2, |i, j| ((i * 3 + j) % 5) as f64);
        let s = set_from(z.clone(), &[0.5; 8], &[1.0; 8]);
        assert!(fit_l_climax(&s, 1, 1.0, 1e-6).unwrap().phi.iter().all(|v| v.abs() < 1e-15));
        let p: Vec<f64> = (0..8).map(|i| 0.1 + 0.1 * i as f64).collect();
        let s = set_from(z, &p, &[1.0; 8]);
        let fit = fit_l_climax(&s, 1, 1e9, 1e-6).unwrap();
        assert!(fit.phi.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-6);
    }

    #[test]
    fn l_climax_classes_are_negations() {
        let z = DMatrix::from_fn(20, 3, |i, j| ((i * 7 + j * 5) % 13) as f64 / 4.0 - 1.5);
        let p: Vec<f64> = (0..20).map(|i| 0.05 + 0.045 * i as f64).collect();
        let w: Vec<f64> = (0..20).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let s = set_from(z, &p, &w);
        let a = fit_l_climax(&s, 1, 1.0, 1e-6).unwrap();
        let b = fit_l_climax(&s, 0, 1.0, 1e-6).unwrap();
        for (x, y) in a.phi.iter().zip(&b.phi) {
            assert!((x + y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn forward_select_finds_the_exact_predictor() {
        let z = DMatrix::from_fn(40, 5, |i, j| (((i + 1) * (j + 3) * 7919) % 101) as f64 / 50.0);
        let y: Vec<f64> = (0..40).map(|i| z[(i, 3)]).collect();
        let sel = forward_select(&z, &y, &[1.0; 40], 2, 1e-6).unwrap();
        assert_eq!(sel[0], 3);
        let mut all = forward_select(&z, &y, &[1.0; 40], 5, 1e-6).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn ranking_breaks_ties_by_index() {
        let phi = [0.0, -2.0, 2.0, 0.5, 0.0];
        let r = rank_features(&phi, &[3, 2, 1, 0]);
        let idx: Vec<usize> = r.iter().map(|f| f.index).collect();
        assert_eq!(idx, vec![1, 2, 3, 0]);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExplainConfig::default();
        assert!(cfg.validate(10).is_ok());
        cfg.k = 11;
        assert!(cfg.validate(10).is_err());
        cfg.k = 5;
        cfg.logit_clip = 0.5;
        assert!(cfg.validate(10).is_err());
        cfg.logit_clip = 1e-6;
        cfg.lambda = Some(-1.0);
        assert!(cfg.validate(10).is_err());
    }
}
