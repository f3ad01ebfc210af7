#![allow(dead_code)]

use std::path::PathBuf;

use climax::blackbox::{train_forest, ForestConfig, ForestModel};
use climax::data::{ingest_csv, TabularDataset};
use climax::surrogate::{FeatureStats, KernelConfig, Provenance, SurrogateSet};
use climax::util::argmax;
use nalgebra::DMatrix;

pub const SPLIT_SEED: u64 = 2024;
pub const FOREST_SEED: u64 = 11;

pub fn data_path(file: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(file)
}

pub fn breast_cancer() -> TabularDataset {
    ingest_csv(&data_path("breast_cancer.csv"), "diagnosis", 0.2, SPLIT_SEED).expect("breast cancer data")
}

pub fn diabetes() -> TabularDataset {
    ingest_csv(&data_path("diabetes.csv"), "outcome", 0.2, SPLIT_SEED).expect("diabetes data")
}

pub fn reference_forest(ds: &TabularDataset) -> ForestModel {
    train_forest(&ds.train_matrix(), &ds.labels_of(&ds.train), &ForestConfig::default(), FOREST_SEED)
        .expect("forest trains")
}

/// Surrogate set over `z` with the given probability rows; design equals `z`
/// and weights are taken as given.
pub fn raw_set(z: DMatrix<f64>, probs: DMatrix<f64>, weights: Vec<f64>) -> SurrogateSet {
    let n = z.nrows();
    let d = z.ncols();
    let hard_labels = (0..n).map(|i| argmax(&probs.row(i).iter().copied().collect::<Vec<_>>())).collect();
    SurrogateSet {
        design: z.clone(),
        z,
        probs,
        hard_labels,
        weights,
        index_sample: vec![0.0; d],
        provenance: vec![Provenance::Bootstrap; n],
        held_constant: vec![],
        stats: FeatureStats::identity(d),
        kernel: KernelConfig::euclidean(1.0),
    }
}

/// Two-class probability matrix with column 1 equal to `p1`.
pub fn binary_probs(p1: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(p1.len(), 2, |i, j| if j == 1 { p1[i] } else { 1.0 - p1[i] })
}
