//! CSV ingestion of labeled tabular data.

use std::collections::BTreeMap;
use std::path::Path;

use log::{info, warn};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::error::{ClimaxError, Result};
use crate::surrogate::FeatureStats;
use crate::util::rng_from_seed;

/// Minimum number of usable rows after ingestion.
pub const MIN_ROWS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub name: String,
    pub feature_names: Vec<String>,
    /// n×d feature matrix in file units.
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
    /// Original label value of each class index.
    pub label_names: Vec<String>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl TabularDataset {
    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.features.row(i).iter().copied().collect()
    }

    pub fn rows(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), self.n_features(), |i, j| self.features[(idx[i], j)])
    }

    pub fn labels_of(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn train_matrix(&self) -> DMatrix<f64> {
        self.rows(&self.train)
    }

    pub fn test_matrix(&self) -> DMatrix<f64> {
        self.rows(&self.test)
    }

    /// Feature scale of the training split.
    pub fn stats(&self) -> FeatureStats {
        FeatureStats::from_data(&self.train_matrix())
    }
}

fn label_order(values: &[String]) -> Vec<String> {
    let mut distinct: Vec<String> = values.to_vec();
    distinct.sort();
    distinct.dedup();
    // numeric labels sort by value, so "10" follows "9"
    if distinct.iter().all(|v| v.parse::<f64>().is_ok()) {
        distinct.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    }
    distinct
}

/// Reads a headed CSV. `label` names the label column, or gives its
/// zero-based position when no header matches. Rows with a missing or
/// non-numeric feature are dropped. `test_fraction` of the rows go to the
/// test split after a seeded shuffle.
pub fn ingest_csv(path: &Path, label: &str, test_fraction: f64, seed: u64) -> Result<TabularDataset> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(ClimaxError::Config(format!("test fraction must lie in [0, 1), got {test_fraction}")));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => ClimaxError::Io(io),
        other => ClimaxError::Schema(format!("{}: {other:?}", path.display())),
    })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| ClimaxError::Schema(format!("{}: unreadable header: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let label_idx = headers
        .iter()
        .position(|h| h == label)
        .or_else(|| label.parse::<usize>().ok().filter(|&i| i < headers.len()))
        .ok_or_else(|| ClimaxError::Schema(format!("label column {label:?} not found in {}", path.display())))?;
    let feature_names: Vec<String> =
        headers.iter().enumerate().filter(|&(j, _)| j != label_idx).map(|(_, h)| h.clone()).collect();
    let d = feature_names.len();
    if d == 0 {
        return Err(ClimaxError::Schema("no feature columns".into()));
    }

    let mut values: Vec<f64> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    let mut dropped = 0usize;
    for record in reader.records() {
        let Ok(record) = record else {
            dropped += 1;
            continue;
        };
        if record.len() != headers.len() {
            dropped += 1;
            continue;
        }
        let lab = record[label_idx].trim();
        let row: Option<Vec<f64>> = (0..headers.len())
            .filter(|&j| j != label_idx)
            .map(|j| record[j].trim().parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        match row {
            Some(r) if !lab.is_empty() => {
                values.extend(r);
                raw_labels.push(lab.to_string());
            }
            _ => dropped += 1,
        }
    }
    if dropped > 0 {
        warn!("{}: dropped {dropped} unusable rows", path.display());
    }
    let n = raw_labels.len();
    if n < MIN_ROWS {
        return Err(ClimaxError::InsufficientData(format!("{n} usable rows, need at least {MIN_ROWS}")));
    }
    let label_names = label_order(&raw_labels);
    if label_names.len() < 2 {
        return Err(ClimaxError::InsufficientData(format!(
            "label column {label:?} has a single value {:?}",
            label_names[0]
        )));
    }
    let index: BTreeMap<&str, usize> = label_names.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
    let labels = raw_labels.iter().map(|v| index[v.as_str()]).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let n_test = (test_fraction * n as f64).round() as usize;
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();

    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into());
    info!("{name}: {n} rows, {d} features, {} classes", label_names.len());
    Ok(TabularDataset {
        name,
        feature_names,
        features: DMatrix::from_row_slice(n, d, &values),
        labels,
        label_names,
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn rows(n: usize) -> String {
        let mut s = String::from("a,b,y\n");
        for i in 0..n {
            s.push_str(&format!("{},{},{}\n", i, i * 2, i % 2));
        }
        s
    }

    #[test]
    fn reads_and_splits() {
        let f = write(&rows(20));
        let ds = ingest_csv(f.path(), "y", 0.25, 3).unwrap();
        assert_eq!(ds.n_rows(), 20);
        assert_eq!(ds.feature_names, vec!["a", "b"]);
        assert_eq!(ds.test.len(), 5);
        let mut all = ds.train.clone();
        all.extend(&ds.test);
        all.sort();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn bad_rows_are_dropped() {
        let mut s = rows(12);
        s.push_str("x,1,0\n,2,1\n3,4\n");
        let f = write(&s);
        assert_eq!(ingest_csv(f.path(), "y", 0.2, 0).unwrap().n_rows(), 12);
    }

    #[test]
    fn missing_label_column() {
        let f = write(&rows(12));
        assert!(matches!(ingest_csv(f.path(), "label", 0.2, 0), Err(ClimaxError::Schema(_))));
    }

    #[test]
    fn label_by_position() {
        let f = write(&rows(12));
        let ds = ingest_csv(f.path(), "2", 0.2, 0).unwrap();
        assert_eq!(ds.feature_names, vec!["a", "b"]);
    }

    #[test]
    fn single_label_and_too_few_rows() {
        let mut s = String::from("a,y\n");
        for i in 0..15 {
            s.push_str(&format!("{i},1\n"));
        }
        assert!(matches!(ingest_csv(write(&s).path(), "y", 0.2, 0), Err(ClimaxError::InsufficientData(_))));
        assert!(matches!(ingest_csv(write(&rows(5)).path(), "y", 0.2, 0), Err(ClimaxError::InsufficientData(_))));
    }

    #[test]
    fn numeric_labels_sort_by_value() {
        assert_eq!(label_order(&["10".into(), "9".into(), "2".into()]), vec!["2", "9", "10"]);
    }
}
