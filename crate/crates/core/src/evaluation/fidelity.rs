use serde::{Deserialize, Serialize};

use crate::error::{ClimaxError, Result};
use crate::explainers::{Explanation, Method};
use crate::surrogate::SurrogateSet;

/// Binary confusion counts with the target class as positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn from_pairs(truth: &[bool], predicted: &[bool]) -> Self {
        let mut c = ConfusionCounts::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t, p) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    // an empty denominator scores 0, as in the usual zero-division convention
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Macro (unweighted two-class mean) precision and recall.
pub fn macro_scores(c: &ConfusionCounts) -> (f64, f64) {
    let p1 = ratio(c.tp, c.tp + c.fp);
    let r1 = ratio(c.tp, c.tp + c.fn_);
    let p0 = ratio(c.tn, c.tn + c.fn_);
    let r0 = ratio(c.tn, c.tn + c.fp);
    ((p1 + p0) / 2.0, (r1 + r0) / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub confusion: ConfusionCounts,
    pub class_counts_initial: Vec<usize>,
    pub class_counts_balanced: Vec<usize>,
    pub class_counts_final: Vec<usize>,
}

/// Compares the explainer's hard predictions on `s` with the black box's
/// labels, both collapsed to target class vs the rest. Ridge explainers of
/// probabilities are thresholded at 0.5, log-odds explainers at 0.
pub fn fidelity_report(s: &SurrogateSet, e: &Explanation) -> Result<FidelityReport> {
    if e.phi.len() != s.n_features() {
        return Err(ClimaxError::Dimension { expected: s.n_features(), actual: e.phi.len() });
    }
    let threshold = match e.config.method {
        Method::Lime => 0.5,
        Method::LClimax | Method::CeClimax => 0.0,
    };
    let mut truth = Vec::with_capacity(s.len());
    let mut predicted = Vec::with_capacity(s.len());
    for i in 0..s.len() {
        let u: Vec<f64> = s.design.row(i).iter().copied().collect();
        let score = e.intercept + e.phi.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
        predicted.push(score >= threshold);
        truth.push(s.hard_labels[i] == e.target_class);
    }
    let confusion = ConfusionCounts::from_pairs(&truth, &predicted);
    let (macro_precision, macro_recall) = macro_scores(&confusion);
    Ok(FidelityReport {
        macro_precision,
        macro_recall,
        confusion,
        class_counts_initial: e.surrogate.class_counts_initial.clone(),
        class_counts_balanced: e.surrogate.class_counts_balanced.clone(),
        class_counts_final: e.surrogate.class_counts_final.clone(),
    })
}

/// Area under the ROC curve (Mann–Whitney statistic, ties counted half).
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(ClimaxError::Dimension { expected: scores.len(), actual: positive.len() });
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(ClimaxError::InsufficientData("AUC needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if positive[k] {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_confusion_matrix() {
        let c = ConfusionCounts { tp: 40, fp: 10, fn_: 20, tn: 30 };
        let (p, r) = macro_scores(&c);
        assert!((p - 0.7).abs() < 1e-15);
        assert!((r - (0.6 / 0.9 + 0.75) / 2.0).abs() < 1e-15);
        assert!((r - 0.7083).abs() < 1e-4);
    }

    #[test]
    fn agreement_extremes() {
        let truth = [true, false, true, false];
        let (p, r) = macro_scores(&ConfusionCounts::from_pairs(&truth, &truth));
        assert_eq!((p, r), (1.0, 1.0));
        let flipped: Vec<bool> = truth.iter().map(|t| !t).collect();
        let (p, r) = macro_scores(&ConfusionCounts::from_pairs(&truth, &flipped));
        assert_eq!((p, r), (0.0, 0.0));
    }

    #[test]
    fn auc_values() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &[false, false, true, true]).unwrap(), 0.0);
        assert_eq!(roc_auc(&[0.5; 4], &[false, true, false, true]).unwrap(), 0.5);
        assert!(roc_auc(&[0.5], &[true]).is_err());
    }
}
