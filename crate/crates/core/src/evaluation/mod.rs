//! Explanation stability and surrogate fidelity.

mod fidelity;
mod stability;

use std::collections::BTreeSet;

use crate::error::{ClimaxError, Result};

pub use fidelity::{fidelity_report, macro_scores, roc_auc, ConfusionCounts, FidelityReport};
pub use stability::{
    mean_pairwise_jaccard, stability_experiment, ExplainerFn, IndexSample, PipelineExplainer, StabilityCell,
    StabilityReport, StabilitySpec, StabilitySummary, TopKExplainer,
};

/// |a ∩ b| and |a ∪ b| as exact integers.
pub fn jaccard_ratio(a: &[usize], b: &[usize]) -> Result<(usize, usize)> {
    let a: BTreeSet<usize> = a.iter().copied().collect();
    let b: BTreeSet<usize> = b.iter().copied().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return Err(ClimaxError::Config("jaccard index of two empty sets is undefined".into()));
    }
    Ok((a.intersection(&b).count(), union))
}

/// |a ∩ b| / |a ∪ b|.
pub fn jaccard(a: &[usize], b: &[usize]) -> Result<f64> {
    let (i, u) = jaccard_ratio(a, b)?;
    Ok(i as f64 / u as f64)
}
