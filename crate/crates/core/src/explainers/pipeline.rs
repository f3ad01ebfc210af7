use log::{debug, info, warn};
use nalgebra::DMatrix;

use super::{
    fit_ce_climax_on, fit_l_climax_on, fit_lime_on, forward_select, log_odds_response, rank_features, Balancer,
    ExplainConfig, Explanation, LocalFit, Method, SurrogateDiagnostics,
};
use crate::blackbox::{row_vec, ProbabilityModel};
use crate::error::{ClimaxError, Result};
use crate::influence::subsample_with_influence;
use crate::surrogate::{
    balance_gmm, balance_ros, fit_gmm, label_with_blackbox, perturb, FeatureStats, SurrogateSet, SCALE_SCHEDULE,
};
use crate::util::{argmax, derive_seed};

const GMM_MAX_ITER: usize = 100;
const GMM_TOL: f64 = 1e-6;
/// Ridge strength used to screen features before the cross-entropy fit.
const CE_SCREEN_LAMBDA: f64 = 1.0;

mod stream {
    pub const PERTURB: u64 = 1;
    pub const BALANCE: u64 = 16;
    pub const GMM: u64 = 17;
    pub const INFLUENCE: u64 = 32;
}

/// argmax of f(x).
pub fn target_class_of(model: &dyn ProbabilityModel, x: &[f64]) -> Result<usize> {
    let probs = model.predict_proba(&DMatrix::from_row_slice(1, x.len(), x))?;
    Ok(argmax(&row_vec(&probs, 0)))
}

fn neighborhood(
    x: &[f64],
    model: &dyn ProbabilityModel,
    stats: &FeatureStats,
    cfg: &ExplainConfig,
) -> Result<(SurrogateSet, f64)> {
    let kernel = cfg.kernel_for(x.len());
    let schedule: &[f64] = if cfg.balancer == Balancer::None { &SCALE_SCHEDULE[..1] } else { &SCALE_SCHEDULE };
    for (attempt, &scale) in schedule.iter().enumerate() {
        let z = perturb(x, stats, cfg.n_prime, scale, derive_seed(cfg.seed, stream::PERTURB + attempt as u64))?;
        let s = label_with_blackbox(model, z, x, stats, &kernel)?;
        if cfg.balancer == Balancer::None || s.classes_present() >= 2 {
            return Ok((s, scale));
        }
        debug!("single-class neighborhood at scale {scale}; widening");
    }
    Err(ClimaxError::SingleClassNeighborhood)
}

fn balance(
    s: &SurrogateSet,
    model: &dyn ProbabilityModel,
    cfg: &ExplainConfig,
) -> Result<(SurrogateSet, bool)> {
    let seed = derive_seed(cfg.seed, stream::BALANCE);
    match cfg.balancer {
        Balancer::None => Ok((s.clone(), false)),
        Balancer::Ros => Ok((balance_ros(s, seed)?, false)),
        Balancer::Gmm => {
            let k = cfg.gmm_components.unwrap_or(s.n_classes()).min(s.len());
            match fit_gmm(s, k, GMM_MAX_ITER, GMM_TOL, derive_seed(cfg.seed, stream::GMM)) {
                Ok(gmm) => {
                    let (b, stats) = balance_gmm(s, model, &gmm, seed)?;
                    debug!("gmm balance: match rate {:.3}, fallback {:?}", stats.match_rate(), stats.ros_fallback);
                    let fell_back = stats.ros_fallback.iter().any(|&r| r > 0);
                    Ok((b, fell_back))
                }
                Err(ClimaxError::DegenerateComponent(c)) => {
                    warn!("mixture component {c} degenerate; balancing by random oversampling");
                    Ok((balance_ros(s, seed)?, true))
                }
                Err(e) => Err(e),
            }
        }
    }
}

fn select_and_fit(s: &SurrogateSet, target: usize, cfg: &ExplainConfig) -> Result<(Vec<usize>, LocalFit)> {
    let lambda = cfg.lambda();
    let eps = cfg.logit_clip;
    match cfg.method {
        Method::Lime => {
            let cols = forward_select(&s.design, &s.target_probs(target), &s.weights, cfg.k, lambda)?;
            let fit = fit_lime_on(s, target, lambda, &cols)?;
            Ok((cols, fit))
        }
        Method::LClimax => {
            let cols = forward_select(&s.design, &log_odds_response(s, target, eps), &s.weights, cfg.k, lambda)?;
            let fit = fit_l_climax_on(s, target, lambda, eps, &cols)?;
            Ok((cols, fit))
        }
        Method::CeClimax => {
            let ones = vec![1.0; s.len()];
            let cols = forward_select(&s.design, &log_odds_response(s, target, eps), &ones, cfg.k, CE_SCREEN_LAMBDA)?;
            let fit = fit_ce_climax_on(s, target, lambda, &cfg.ce_budget, &cols)?;
            if !fit.diagnostics.converged {
                info!("cross-entropy fit stopped after {} iterations without converging", fit.diagnostics.iterations);
            }
            Ok((cols, fit))
        }
    }
}

/// Runs the full pipeline and also returns the surrogate set the final
/// model was fitted on.
pub fn explain_with_surrogate(
    x: &[f64],
    model: &dyn ProbabilityModel,
    stats: &FeatureStats,
    cfg: &ExplainConfig,
) -> Result<(Explanation, SurrogateSet)> {
    let d = x.len();
    if stats.n_features() != d {
        return Err(ClimaxError::Dimension { expected: stats.n_features(), actual: d });
    }
    if let Some(md) = model.n_features() {
        if md != d {
            return Err(ClimaxError::Dimension { expected: md, actual: d });
        }
    }
    cfg.validate(d)?;

    let (initial, scale) = neighborhood(x, model, stats, cfg)?;
    let target = initial.hard_labels[0];
    let (balanced, balance_fallback) = balance(&initial, model, cfg)?;
    let fitted = match &cfg.influence {
        Some(inf) => {
            let (reduced, _) = subsample_with_influence(&balanced, target, inf, derive_seed(cfg.seed, stream::INFLUENCE))?;
            reduced
        }
        None => balanced.clone(),
    };
    let (selected, fit) = select_and_fit(&fitted, target, cfg)?;
    if fit.phi.iter().any(|v| !v.is_finite()) || !fit.intercept.is_finite() {
        return Err(ClimaxError::IllConditioned(f64::INFINITY));
    }
    let explanation = Explanation {
        top_features: rank_features(&fit.phi, &selected),
        phi: fit.phi,
        intercept: fit.intercept,
        target_class: target,
        contrast_classes: (0..initial.n_classes()).filter(|&c| c != target).collect(),
        config: cfg.clone(),
        surrogate: SurrogateDiagnostics {
            perturbation_scale: scale,
            n_initial: initial.len(),
            class_counts_initial: initial.class_counts(),
            n_balanced: balanced.len(),
            class_counts_balanced: balanced.class_counts(),
            n_final: fitted.len(),
            class_counts_final: fitted.class_counts(),
            balance_fallback,
        },
        fit: fit.diagnostics,
    };
    Ok((explanation, fitted))
}

/// Explains the black box's prediction at `x`: perturb (widening the
/// neighborhood when balancing needs two classes), label, balance,
/// optionally subsample by influence, select k features and fit.
pub fn explain(
    x: &[f64],
    model: &dyn ProbabilityModel,
    stats: &FeatureStats,
    cfg: &ExplainConfig,
) -> Result<Explanation> {
    explain_with_surrogate(x, model, stats, cfg).map(|(e, _)| e)
}
