//! Perturbation neighborhoods around an index sample, labeled by the black
//! box and rebalanced across classes.

mod balance;
mod gmm;

use log::debug;
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::blackbox::{simplex_violation, ProbabilityModel};
use crate::error::{ClimaxError, Result};
use crate::util::{argmax, rng_from_seed};

pub use balance::{balance_gmm, balance_ros, GmmSamplingStats};
pub use gmm::{fit_gmm, fit_mixture, GaussianMixture, GmmModel};

/// Scale schedule tried in order until the neighborhood holds two classes.
pub const SCALE_SCHEDULE: [f64; 4] = [1.0, 1.5, 2.0, 3.0];

/// Per-feature location and scale of the training distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(ClimaxError::Dimension { expected: mean.len(), actual: std.len() });
        }
        if std.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(ClimaxError::Config("standard deviations must be finite and >= 0".into()));
        }
        Ok(FeatureStats { mean, std })
    }

    /// Column means and population standard deviations of `data`.
    pub fn from_data(data: &DMatrix<f64>) -> Self {
        let n = data.nrows() as f64;
        let mut mean = Vec::with_capacity(data.ncols());
        let mut std = Vec::with_capacity(data.ncols());
        for col in data.column_iter() {
            let m = col.iter().sum::<f64>() / n;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            std.push(v.sqrt());
        }
        FeatureStats { mean, std }
    }

    /// Identity scaling: design coordinates equal feature units.
    pub fn identity(d: usize) -> Self {
        FeatureStats { mean: vec![0.0; d], std: vec![1.0; d] }
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn zero_variance(&self) -> Vec<usize> {
        self.std.iter().enumerate().filter(|(_, s)| **s == 0.0).map(|(j, _)| j).collect()
    }

    fn unit(&self, j: usize) -> f64 {
        if self.std[j] > 0.0 {
            self.std[j]
        } else {
            1.0
        }
    }

    /// Feature units → standardized design coordinates.
    pub fn standardize(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| (z[(i, j)] - self.mean[j]) / self.unit(j))
    }

    pub fn standardize_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(j, v)| (v - self.mean[j]) / self.unit(j)).collect()
    }

    /// Standardized design coordinates → feature units.
    pub fn unstandardize_row(&self, u: &[f64]) -> Vec<f64> {
        u.iter().enumerate().map(|(j, v)| self.mean[j] + v * self.unit(j)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    Euclidean,
    Cosine,
}

/// Proximity kernel exp(−dist²/w²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub distance: Distance,
    pub width: f64,
}

impl KernelConfig {
    pub fn euclidean(width: f64) -> Self {
        KernelConfig { distance: Distance::Euclidean, width }
    }

    /// Width 0.75·√d.
    pub fn default_for(d: usize) -> Self {
        Self::euclidean(0.75 * (d as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        if self.width > 0.0 && self.width.is_finite() {
            Ok(())
        } else {
            Err(ClimaxError::Config(format!("kernel width must be > 0, got {}", self.width)))
        }
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.distance {
            Distance::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt(),
            Distance::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    debug!("cosine distance with a zero vector; using 1");
                    1.0
                } else {
                    (1.0 - dot / (na * nb)).max(0.0)
                }
            }
        }
    }

    pub fn weight(&self, a: &[f64], b: &[f64]) -> f64 {
        let d = self.distance(a, b);
        (-(d * d) / (self.width * self.width)).exp()
    }
}

/// Where a surrogate row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Bootstrap,
    RosDuplicate,
    GmmSample,
}

/// Perturbed instances with black-box probabilities, hard labels and
/// proximity weights. Explainers fit on the standardized `design` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateSet {
    /// n′×d perturbed instances in feature units.
    pub z: DMatrix<f64>,
    /// `z` in standardized coordinates.
    pub design: DMatrix<f64>,
    /// n′×C black-box probabilities.
    pub probs: DMatrix<f64>,
    pub hard_labels: Vec<usize>,
    pub weights: Vec<f64>,
    pub index_sample: Vec<f64>,
    pub provenance: Vec<Provenance>,
    /// Features the perturbation held fixed (zero training variance).
    pub held_constant: Vec<usize>,
    pub stats: FeatureStats,
    pub kernel: KernelConfig,
}

impl SurrogateSet {
    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.z.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.probs.ncols()
    }

    /// Counts per class index, over all C classes.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes()];
        for &l in &self.hard_labels {
            c[l] += 1;
        }
        c
    }

    pub fn classes_present(&self) -> usize {
        self.class_counts().iter().filter(|&&k| k > 0).count()
    }

    /// Probability column of `class`: y_c under the one-vs-rest reduction.
    pub fn target_probs(&self, class: usize) -> Vec<f64> {
        self.probs.column(class).iter().copied().collect()
    }

    pub fn index_design(&self) -> Vec<f64> {
        self.stats.standardize_row(&self.index_sample)
    }

    /// New set holding `rows` (in order); duplicates allowed.
    pub fn select_rows(&self, rows: &[usize]) -> SurrogateSet {
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)]);
        SurrogateSet {
            z: pick(&self.z),
            design: pick(&self.design),
            probs: pick(&self.probs),
            hard_labels: rows.iter().map(|&r| self.hard_labels[r]).collect(),
            weights: rows.iter().map(|&r| self.weights[r]).collect(),
            index_sample: self.index_sample.clone(),
            provenance: rows.iter().map(|&r| self.provenance[r]).collect(),
            held_constant: self.held_constant.clone(),
            stats: self.stats.clone(),
            kernel: self.kernel,
        }
    }

    /// Appends rows whose probabilities came from the black box; labels and
    /// kernel weights are recomputed.
    pub(crate) fn append(&mut self, z_rows: &[Vec<f64>], prob_rows: &[Vec<f64>], tag: Provenance) {
        if z_rows.is_empty() {
            return;
        }
        let n = self.len();
        let m = z_rows.len();
        let d = self.n_features();
        let c = self.n_classes();
        let xd = self.index_design();
        let mut z = self.z.clone().resize_vertically(n + m, 0.0);
        let mut design = self.design.clone().resize_vertically(n + m, 0.0);
        let mut probs = self.probs.clone().resize_vertically(n + m, 0.0);
        for (k, (zr, pr)) in z_rows.iter().zip(prob_rows).enumerate() {
            let u = self.stats.standardize_row(zr);
            for j in 0..d {
                z[(n + k, j)] = zr[j];
                design[(n + k, j)] = u[j];
            }
            for j in 0..c {
                probs[(n + k, j)] = pr[j];
            }
            self.hard_labels.push(argmax(pr));
            self.weights.push(self.kernel.weight(&xd, &u));
            self.provenance.push(tag);
        }
        self.z = z;
        self.design = design;
        self.probs = probs;
    }

    /// Copies existing rows to the end of the set.
    pub(crate) fn duplicate_rows(&mut self, rows: &[usize], tag: Provenance) {
        let z_rows: Vec<Vec<f64>> = rows.iter().map(|&r| self.z.row(r).iter().copied().collect()).collect();
        let p_rows: Vec<Vec<f64>> = rows.iter().map(|&r| self.probs.row(r).iter().copied().collect()).collect();
        let weights: Vec<f64> = rows.iter().map(|&r| self.weights[r]).collect();
        let n = self.len();
        self.append(&z_rows, &p_rows, tag);
        // keep the source's weight bit-for-bit
        for (k, w) in weights.into_iter().enumerate() {
            self.weights[n + k] = w;
        }
    }

    /// Verifies the set's internal invariants.
    pub fn check_consistency(&self) -> Result<()> {
        let n = self.len();
        let bad = |msg: String| Err(ClimaxError::Config(format!("inconsistent surrogate set: {msg}")));
        if self.probs.nrows() != n
            || self.design.nrows() != n
            || self.hard_labels.len() != n
            || self.weights.len() != n
            || self.provenance.len() != n
        {
            return bad("array lengths differ".into());
        }
        if let Some(msg) = simplex_violation(&self.probs, self.n_classes()) {
            return bad(msg);
        }
        let xd = self.index_design();
        for i in 0..n {
            let row: Vec<f64> = self.probs.row(i).iter().copied().collect();
            if self.hard_labels[i] != argmax(&row) {
                return bad(format!("row {i} label is not the argmax"));
            }
            let u: Vec<f64> = self.design.row(i).iter().copied().collect();
            let w = self.kernel.weight(&xd, &u);
            if !(self.weights[i] > 0.0 && self.weights[i] <= 1.0) || (self.weights[i] - w).abs() > 1e-12 {
                return bad(format!("row {i} weight {} does not match kernel {w}", self.weights[i]));
            }
        }
        Ok(())
    }
}

/// Gaussian perturbations x + scale·std·g around `x`; row 0 is `x` itself.
pub fn perturb(x: &[f64], stats: &FeatureStats, n_prime: usize, scale: f64, seed: u64) -> Result<DMatrix<f64>> {
    if n_prime == 0 {
        return Err(ClimaxError::Config("surrogate count must be at least 1".into()));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(ClimaxError::Config(format!("perturbation scale must be > 0, got {scale}")));
    }
    let d = x.len();
    if stats.n_features() != d {
        return Err(ClimaxError::Dimension { expected: stats.n_features(), actual: d });
    }
    let mut rng = rng_from_seed(seed);
    let mut z = DMatrix::zeros(n_prime, d);
    for j in 0..d {
        z[(0, j)] = x[j];
    }
    for i in 1..n_prime {
        for j in 0..d {
            let g: f64 = StandardNormal.sample(&mut rng);
            z[(i, j)] = x[j] + scale * stats.std[j] * g;
        }
    }
    Ok(z)
}

/// exp(−dist(x, z_i)²/w²) for every row of `z`.
pub fn proximity_weights(x: &[f64], z: &DMatrix<f64>, kernel: &KernelConfig) -> Result<Vec<f64>> {
    kernel.validate()?;
    if z.nrows() == 0 {
        return Err(ClimaxError::Config("empty perturbation matrix".into()));
    }
    if z.ncols() != x.len() {
        return Err(ClimaxError::Dimension { expected: x.len(), actual: z.ncols() });
    }
    Ok((0..z.nrows())
        .map(|i| {
            let row: Vec<f64> = z.row(i).iter().copied().collect();
            kernel.weight(x, &row)
        })
        .collect())
}

/// Queries the black box on `z` and builds the surrogate set. Kernel
/// distances are taken in standardized coordinates.
pub fn label_with_blackbox(
    model: &dyn ProbabilityModel,
    z: DMatrix<f64>,
    x: &[f64],
    stats: &FeatureStats,
    kernel: &KernelConfig,
) -> Result<SurrogateSet> {
    if model.n_classes() < 2 {
        return Err(ClimaxError::Config("black box must expose at least two classes".into()));
    }
    let probs = model.predict_proba(&z)?;
    if let Some(msg) = simplex_violation(&probs, model.n_classes()) {
        return Err(ClimaxError::ModelUnavailable(msg));
    }
    let design = stats.standardize(&z);
    let weights = proximity_weights(&stats.standardize_row(x), &design, kernel)?;
    let hard_labels = (0..probs.nrows())
        .map(|i| argmax(&probs.row(i).iter().copied().collect::<Vec<_>>()))
        .collect();
    let n = z.nrows();
    Ok(SurrogateSet {
        z,
        design,
        probs,
        hard_labels,
        weights,
        index_sample: x.to_vec(),
        provenance: vec![Provenance::Bootstrap; n],
        held_constant: stats.zero_variance(),
        stats: stats.clone(),
        kernel: *kernel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blackbox::{ConstantModel, FnModel};

    fn stats3() -> FeatureStats {
        FeatureStats::new(vec![0.0; 3], vec![1.0, 2.0, 0.5]).unwrap()
    }

    #[test]
    fn first_row_is_the_index_sample() {
        let x = [0.3, -1.0, 4.0];
        let z = perturb(&x, &stats3(), 5, 1.0, 9).unwrap();
        assert_eq!(z.row(0).iter().copied().collect::<Vec<_>>(), x.to_vec());
    }

    #[test]
    fn tiny_scale_collapses_to_x() {
        let x = [0.3, -1.0, 4.0];
        let z = perturb(&x, &stats3(), 50, 1e-12, 9).unwrap();
        for i in 0..50 {
            for j in 0..3 {
                assert!((z[(i, j)] - x[j]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn perturbation_is_seeded() {
        let x = [0.3, -1.0, 4.0];
        let a = perturb(&x, &stats3(), 20, 1.0, 4).unwrap();
        let b = perturb(&x, &stats3(), 20, 1.0, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, perturb(&x, &stats3(), 20, 1.0, 5).unwrap());
    }

    #[test]
    fn large_sample_moments_match_feature_scale() {
        let st = stats3();
        let z = perturb(&[0.0; 3], &st, 10_000, 1.0, 77).unwrap();
        for j in 0..3 {
            let col: Vec<f64> = z.column(j).iter().copied().collect();
            let sd = crate::util::std_dev(&col);
            assert!((sd / st.std[j] - 1.0).abs() < 0.05, "feature {j}: {sd}");
        }
    }

    #[test]
    fn zero_variance_feature_is_held() {
        let st = FeatureStats::new(vec![0.0; 2], vec![1.0, 0.0]).unwrap();
        let z = perturb(&[1.0, 7.0], &st, 30, 2.0, 1).unwrap();
        assert!(z.column(1).iter().all(|&v| v == 7.0));
        assert_eq!(st.zero_variance(), vec![1]);
    }

    #[test]
    fn kernel_values() {
        let k = KernelConfig::euclidean(2.0);
        let z = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 3.0, 4.0, 5.0]);
        let w = proximity_weights(&[1.0, 1.0], &z, &k).unwrap();
        assert_eq!(w[0], 1.0);
        assert!((w[1] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((w[1] - 0.367879).abs() < 1e-6);
        assert!(w[2] < w[1]);
    }

    #[test]
    fn cosine_zero_vector_is_orthogonal() {
        let k = KernelConfig { distance: Distance::Cosine, width: 1.0 };
        assert_eq!(k.distance(&[0.0, 0.0], &[1.0, 2.0]), 1.0);
        assert!(k.distance(&[1.0, 2.0], &[2.0, 4.0]).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_width_is_rejected() {
        let z = DMatrix::zeros(1, 1);
        assert!(proximity_weights(&[0.0], &z, &KernelConfig::euclidean(0.0)).is_err());
    }

    #[test]
    fn constant_host_ties_go_to_class_zero() {
        let host = ConstantModel { probabilities: vec![0.5, 0.5] };
        let st = stats3();
        let z = perturb(&[0.0; 3], &st, 10, 1.0, 0).unwrap();
        let s = label_with_blackbox(&host, z, &[0.0; 3], &st, &KernelConfig::default_for(3)).unwrap();
        assert!(s.hard_labels.iter().all(|&l| l == 0));
        s.check_consistency().unwrap();
    }

    #[test]
    fn threshold_host_labels_by_sign() {
        let host = FnModel::new(3, 2, |x: &[f64]| if x[0] > 0.0 { vec![0.0, 1.0] } else { vec![1.0, 0.0] });
        let st = stats3();
        let z = perturb(&[0.0; 3], &st, 200, 1.0, 3).unwrap();
        let s = label_with_blackbox(&host, z.clone(), &[0.0; 3], &st, &KernelConfig::default_for(3)).unwrap();
        for i in 0..200 {
            assert_eq!(s.hard_labels[i], usize::from(z[(i, 0)] > 0.0));
        }
    }

    #[test]
    fn single_row_equal_to_x_has_unit_weight() {
        let host = ConstantModel { probabilities: vec![0.2, 0.8] };
        let st = stats3();
        let x = [1.0, 2.0, 3.0];
        let z = DMatrix::from_row_slice(1, 3, &x);
        let s = label_with_blackbox(&host, z, &x, &st, &KernelConfig::default_for(3)).unwrap();
        assert_eq!(s.weights, vec![1.0]);
    }
}
