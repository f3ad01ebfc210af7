use std::fmt::Write;

use log::warn;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::jaccard;
use crate::blackbox::ProbabilityModel;
use crate::error::{ClimaxError, Result};
use crate::explainers::{explain, ExplainConfig};
use crate::surrogate::FeatureStats;
use crate::util::{derive_seed, fmt_f64, rng_from_seed};

/// Anything that returns a top-k feature set for an instance.
pub trait TopKExplainer: Sync {
    fn label(&self) -> String;
    fn top_k(&self, x: &[f64], n_prime: usize, seed: u64) -> Result<Vec<usize>>;
}

/// The explanation pipeline as a stability subject.
pub struct PipelineExplainer<'a> {
    pub model: &'a dyn ProbabilityModel,
    pub stats: &'a FeatureStats,
    pub config: ExplainConfig,
}

impl TopKExplainer for PipelineExplainer<'_> {
    fn label(&self) -> String {
        self.config.label()
    }

    fn top_k(&self, x: &[f64], n_prime: usize, seed: u64) -> Result<Vec<usize>> {
        let cfg = ExplainConfig { n_prime, seed, ..self.config.clone() };
        Ok(explain(x, self.model, self.stats, &cfg)?.top_indices())
    }
}

/// Wraps a closure `(x, n′, seed) → top-k`.
pub struct ExplainerFn<F> {
    pub label: String,
    pub f: F,
}

impl<F> TopKExplainer for ExplainerFn<F>
where
    F: Fn(&[f64], usize, u64) -> Result<Vec<usize>> + Sync,
{
    fn label(&self) -> String {
        self.label.clone()
    }

    fn top_k(&self, x: &[f64], n_prime: usize, seed: u64) -> Result<Vec<usize>> {
        (self.f)(x, n_prime, seed)
    }
}

/// A candidate index sample with its row id in the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSample {
    pub id: usize,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySpec {
    pub dataset: String,
    pub n_prime_grid: Vec<usize>,
    pub repeats: usize,
    pub index_count: usize,
    pub master_seed: u64,
    /// Worker threads; `None` uses rayon's default.
    pub jobs: Option<usize>,
}

impl Default for StabilitySpec {
    fn default() -> Self {
        StabilitySpec {
            dataset: "dataset".into(),
            n_prime_grid: vec![500, 1000, 1500, 2000, 2500],
            repeats: 20,
            index_count: 10,
            master_seed: 0,
            jobs: None,
        }
    }
}

/// Repeated explanations of one index sample by one method at one n′.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCell {
    pub method: String,
    pub n_prime: usize,
    pub index_id: usize,
    pub top_sets: Vec<Vec<usize>>,
    pub failures: Vec<String>,
    pub pairs: usize,
    /// `None` when fewer than two runs succeeded.
    pub mean_jaccard: Option<f64>,
    pub jaccard_sum: f64,
}

impl StabilityCell {
    pub fn incomplete(&self) -> bool {
        !self.failures.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub method: String,
    pub n_prime: usize,
    /// Mean over every pair of every index sample.
    pub grand_mean_jaccard: Option<f64>,
    pub cells: usize,
    pub incomplete_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub dataset: String,
    pub index_ids: Vec<usize>,
    pub repeats: usize,
    pub cells: Vec<StabilityCell>,
    pub summary: Vec<StabilitySummary>,
}

/// (Σ J, pair count) over all unordered pairs of `sets`.
pub fn mean_pairwise_jaccard(sets: &[Vec<usize>]) -> Result<(f64, usize)> {
    let mut sum = 0.0;
    let mut pairs = 0;
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            sum += jaccard(&sets[i], &sets[j])?;
            pairs += 1;
        }
    }
    Ok((sum, pairs))
}

fn run_seed(master: u64, index_id: usize, n_prime: usize, repeat: usize) -> u64 {
    derive_seed(derive_seed(derive_seed(master, index_id as u64), n_prime as u64), repeat as u64)
}

fn run_cell(
    explainer: &dyn TopKExplainer,
    method: &str,
    sample: &IndexSample,
    n_prime: usize,
    spec: &StabilitySpec,
) -> Result<StabilityCell> {
    let mut top_sets = Vec::with_capacity(spec.repeats);
    let mut failures = Vec::new();
    for r in 0..spec.repeats {
        match explainer.top_k(&sample.x, n_prime, run_seed(spec.master_seed, sample.id, n_prime, r)) {
            Ok(set) => top_sets.push(set),
            Err(e) => {
                warn!("{method} n'={n_prime} index {} repeat {r}: {e}", sample.id);
                failures.push(e.to_string());
            }
        }
    }
    let (jaccard_sum, pairs) = mean_pairwise_jaccard(&top_sets)?;
    Ok(StabilityCell {
        method: method.to_string(),
        n_prime,
        index_id: sample.id,
        top_sets,
        failures,
        pairs,
        mean_jaccard: (pairs > 0).then(|| jaccard_sum / pairs as f64),
        jaccard_sum,
    })
}

/// Draws `index_count` index samples from `pool` and, for every explainer
/// and n′, explains each of them `repeats` times with distinct derived
/// seeds. Failed runs are recorded on their cell and left out of the means.
pub fn stability_experiment(
    spec: &StabilitySpec,
    pool: &[IndexSample],
    explainers: &[&dyn TopKExplainer],
) -> Result<StabilityReport> {
    if spec.index_count == 0 || spec.index_count > pool.len() {
        return Err(ClimaxError::Config(format!(
            "cannot draw {} index samples from a pool of {}",
            spec.index_count,
            pool.len()
        )));
    }
    if spec.repeats == 0 || spec.n_prime_grid.is_empty() || explainers.is_empty() {
        return Err(ClimaxError::Config("stability grid is empty".into()));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut rng_from_seed(derive_seed(spec.master_seed, u64::MAX)));
    let samples: Vec<&IndexSample> = order[..spec.index_count].iter().map(|&i| &pool[i]).collect();
    let labels: Vec<String> = explainers.iter().map(|e| e.label()).collect();

    let mut tasks = Vec::new();
    for m in 0..explainers.len() {
        for &n_prime in &spec.n_prime_grid {
            for s in &samples {
                tasks.push((m, n_prime, *s));
            }
        }
    }
    let work = || -> Result<Vec<StabilityCell>> {
        tasks
            .par_iter()
            .map(|&(m, n_prime, s)| run_cell(explainers[m], &labels[m], s, n_prime, spec))
            .collect()
    };
    let cells = match spec.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| ClimaxError::Config(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };

    let mut summary = Vec::new();
    for label in &labels {
        for &n_prime in &spec.n_prime_grid {
            let group: Vec<&StabilityCell> =
                cells.iter().filter(|c| &c.method == label && c.n_prime == n_prime).collect();
            let pairs: usize = group.iter().map(|c| c.pairs).sum();
            let sum: f64 = group.iter().map(|c| c.jaccard_sum).sum();
            summary.push(StabilitySummary {
                method: label.clone(),
                n_prime,
                grand_mean_jaccard: (pairs > 0).then(|| sum / pairs as f64),
                cells: group.len(),
                incomplete_cells: group.iter().filter(|c| c.incomplete()).count(),
            });
        }
    }
    Ok(StabilityReport {
        dataset: spec.dataset.clone(),
        index_ids: samples.iter().map(|s| s.id).collect(),
        repeats: spec.repeats,
        cells,
        summary,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), fmt_f64)
}

impl StabilityReport {
    /// Grand mean for one method and n′.
    pub fn grand_mean(&self, method: &str, n_prime: usize) -> Option<f64> {
        self.summary.iter().find(|s| s.method == method && s.n_prime == n_prime)?.grand_mean_jaccard
    }

    /// Pair-weighted mean over every n′ of one method.
    pub fn method_mean(&self, method: &str) -> Option<f64> {
        let cells: Vec<&StabilityCell> = self.cells.iter().filter(|c| c.method == method).collect();
        let pairs: usize = cells.iter().map(|c| c.pairs).sum();
        (pairs > 0).then(|| cells.iter().map(|c| c.jaccard_sum).sum::<f64>() / pairs as f64)
    }

    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.summary {
            if !out.contains(&s.method) {
                out.push(s.method.clone());
            }
        }
        out
    }

    /// Per-cell rows followed by a `# summary` block.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,method,n_prime,index_id,mean_jaccard,pairs,failures\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                self.dataset,
                c.method,
                c.n_prime,
                c.index_id,
                opt(c.mean_jaccard),
                c.pairs,
                c.failures.len()
            );
        }
        out.push_str("# summary\ndataset,method,n_prime,grand_mean_jaccard,cells,incomplete_cells\n");
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                self.dataset,
                s.method,
                s.n_prime,
                opt(s.grand_mean_jaccard),
                s.cells,
                s.incomplete_cells
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(n: usize) -> Vec<IndexSample> {
        (0..n).map(|i| IndexSample { id: i, x: vec![i as f64] }).collect()
    }

    #[test]
    fn constant_explainer_is_perfectly_stable() {
        let e = ExplainerFn { label: "fixed".into(), f: |_: &[f64], _: usize, _: u64| Ok(vec![0, 3, 5, 7, 9]) };
        let spec = StabilitySpec { n_prime_grid: vec![100], repeats: 20, index_count: 4, ..Default::default() };
        let r = stability_experiment(&spec, &pool(10), &[&e]).unwrap();
        assert_eq!(r.cells.len(), 4);
        assert!(r.cells.iter().all(|c| c.pairs == 190 && c.mean_jaccard == Some(1.0)));
        assert_eq!(r.grand_mean("fixed", 100), Some(1.0));
    }

    #[test]
    fn single_repeat_has_no_pairs() {
        let e = ExplainerFn { label: "fixed".into(), f: |_: &[f64], _: usize, _: u64| Ok(vec![1]) };
        let spec = StabilitySpec { n_prime_grid: vec![10], repeats: 1, index_count: 2, ..Default::default() };
        let r = stability_experiment(&spec, &pool(3), &[&e]).unwrap();
        assert!(r.cells.iter().all(|c| c.mean_jaccard.is_none()));
        assert!(r.to_csv().contains(",NaN,0,0"));
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        let e = ExplainerFn {
            label: "flaky".into(),
            f: |_: &[f64], _: usize, seed: u64| {
                if seed % 3 == 0 {
                    Err(ClimaxError::SingleClassNeighborhood)
                } else {
                    Ok(vec![1, 2])
                }
            },
        };
        let spec = StabilitySpec { n_prime_grid: vec![10], repeats: 12, index_count: 3, ..Default::default() };
        let r = stability_experiment(&spec, &pool(5), &[&e]).unwrap();
        for c in &r.cells {
            assert_eq!(c.top_sets.len() + c.failures.len(), 12);
        }
    }

    #[test]
    fn report_is_reproducible_across_thread_counts() {
        let e = ExplainerFn {
            label: "seeded".into(),
            f: |_: &[f64], _: usize, seed: u64| Ok(vec![(seed % 7) as usize, (seed % 11) as usize + 7]),
        };
        let mut spec = StabilitySpec { n_prime_grid: vec![5, 6], repeats: 5, index_count: 3, master_seed: 9, ..Default::default() };
        spec.jobs = Some(1);
        let a = stability_experiment(&spec, &pool(8), &[&e]).unwrap();
        spec.jobs = Some(4);
        let b = stability_experiment(&spec, &pool(8), &[&e]).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn too_few_index_samples_is_an_error() {
        let e = ExplainerFn { label: "x".into(), f: |_: &[f64], _: usize, _: u64| Ok(vec![1]) };
        let spec = StabilitySpec { index_count: 5, ..Default::default() };
        assert!(stability_experiment(&spec, &pool(3), &[&e]).is_err());
    }
}
