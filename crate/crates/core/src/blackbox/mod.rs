//! Black-box classifiers with probability-only query access.

mod external;
mod forest;
pub mod protocol;

use nalgebra::DMatrix;

use crate::error::{ClimaxError, Result};

pub use external::{open_external, ExternalModel, ExternalModelSpec};
pub use forest::{train_forest, ForestConfig, ForestModel, Node, Tree};

/// Tolerance on |Σ_c p_c − 1| for every returned probability row.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A classifier that can only be queried for class probabilities.
///
/// `predict_proba` maps an n×d batch to an n×C matrix whose rows lie on the
/// probability simplex. Queries must be pure.
pub trait ProbabilityModel: Send + Sync {
    fn n_classes(&self) -> usize;

    /// Feature count, when the model knows it.
    fn n_features(&self) -> Option<usize>;

    fn predict_proba(&self, batch: &DMatrix<f64>) -> Result<DMatrix<f64>>;
}

impl<M: ProbabilityModel + ?Sized> ProbabilityModel for Box<M> {
    fn n_classes(&self) -> usize {
        (**self).n_classes()
    }
    fn n_features(&self) -> Option<usize> {
        (**self).n_features()
    }
    fn predict_proba(&self, batch: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        (**self).predict_proba(batch)
    }
}

impl<M: ProbabilityModel + ?Sized> ProbabilityModel for std::sync::Arc<M> {
    fn n_classes(&self) -> usize {
        (**self).n_classes()
    }
    fn n_features(&self) -> Option<usize> {
        (**self).n_features()
    }
    fn predict_proba(&self, batch: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        (**self).predict_proba(batch)
    }
}

/// Checks that a batch has the column count a model expects.
pub fn check_batch(model: &dyn ProbabilityModel, batch: &DMatrix<f64>) -> Result<()> {
    match model.n_features() {
        Some(d) if batch.nrows() > 0 && batch.ncols() != d => {
            Err(ClimaxError::Dimension { expected: d, actual: batch.ncols() })
        }
        _ => Ok(()),
    }
}

/// Returns a description of the first row that leaves the simplex, if any.
pub fn simplex_violation(probs: &DMatrix<f64>, classes: usize) -> Option<String> {
    if probs.ncols() != classes {
        return Some(format!("row width {} but the model declares {classes} classes", probs.ncols()));
    }
    for i in 0..probs.nrows() {
        let row = probs.row(i);
        if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Some(format!("row {i} has an entry outside [0, 1]"));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Some(format!("row {i} sums to {s}"));
        }
    }
    None
}

/// One row of a matrix as an owned vector.
pub fn row_vec(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

/// In-process model backed by a per-instance closure. Used for synthetic
/// black boxes in experiments and tests.
pub struct FnModel<F> {
    d: usize,
    classes: usize,
    f: F,
}

impl<F> FnModel<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Send + Sync,
{
    pub fn new(d: usize, classes: usize, f: F) -> Self {
        FnModel { d, classes, f }
    }
}

impl<F> ProbabilityModel for FnModel<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Send + Sync,
{
    fn n_classes(&self) -> usize {
        self.classes
    }

    fn n_features(&self) -> Option<usize> {
        Some(self.d)
    }

    fn predict_proba(&self, batch: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_batch(self, batch)?;
        let mut out = DMatrix::zeros(batch.nrows(), self.classes);
        for i in 0..batch.nrows() {
            let p = (self.f)(&row_vec(batch, i));
            if p.len() != self.classes {
                return Err(ClimaxError::ModelUnavailable(format!(
                    "closure returned {} probabilities for {} classes",
                    p.len(),
                    self.classes
                )));
            }
            for (c, v) in p.into_iter().enumerate() {
                out[(i, c)] = v;
            }
        }
        if let Some(msg) = simplex_violation(&out, self.classes) {
            return Err(ClimaxError::ModelUnavailable(msg));
        }
        Ok(out)
    }
}

/// Binary logistic model σ(b + wᵀx); column 1 is the positive class.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ProbabilityModel for LogisticModel {
    fn n_classes(&self) -> usize {
        2
    }

    fn n_features(&self) -> Option<usize> {
        Some(self.weights.len())
    }

    fn predict_proba(&self, batch: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_batch(self, batch)?;
        let mut out = DMatrix::zeros(batch.nrows(), 2);
        for i in 0..batch.nrows() {
            let eta = self.bias + self.weights.iter().enumerate().map(|(j, w)| w * batch[(i, j)]).sum::<f64>();
            let p1 = crate::util::sigmoid(eta);
            out[(i, 1)] = p1;
            out[(i, 0)] = 1.0 - p1;
        }
        Ok(out)
    }
}

/// Returns the same probability row for every instance.
#[derive(Debug, Clone)]
pub struct ConstantModel {
    pub probabilities: Vec<f64>,
}

impl ProbabilityModel for ConstantModel {
    fn n_classes(&self) -> usize {
        self.probabilities.len()
    }

    fn n_features(&self) -> Option<usize> {
        None
    }

    fn predict_proba(&self, batch: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let c = self.probabilities.len();
        Ok(DMatrix::from_fn(batch.nrows(), c, |_, j| self.probabilities[j]))
    }
}
