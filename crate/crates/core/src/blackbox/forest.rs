//! Bagged CART forest used as the reference black box.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_batch, ProbabilityModel};
use crate::error::{ClimaxError, Result};
use crate::util::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Features examined per split; `None` means ⌈√d⌉.
    pub max_features: Option<usize>,
    /// Pseudocount added to every leaf class count (1 = Laplace smoothing).
    pub leaf_pseudocount: f64,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 100, max_depth: 8, max_features: None, leaf_pseudocount: 1.0, bootstrap: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { counts: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn leaf_for(&self, x: &[f64]) -> &[u32] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split { feature, threshold, left, right } => {
                    at = if x[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf { counts } => return counts,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, at: usize) -> usize {
            match &t.nodes[at] {
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub n_classes: usize,
    pub config: ForestConfig,
    pub seed: u64,
}

impl ForestModel {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn max_depth(&self) -> usize {
        self.config.max_depth
    }

    fn predict_row(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let alpha = self.config.leaf_pseudocount;
        let c = self.n_classes as f64;
        for tree in &self.trees {
            let counts = tree.leaf_for(x);
            let total: f64 = counts.iter().map(|&k| k as f64).sum::<f64>() + alpha * c;
            for (o, &k) in out.iter_mut().zip(counts) {
                *o += (k as f64 + alpha) / total;
            }
        }
        let t = self.trees.len() as f64;
        out.iter_mut().for_each(|v| *v /= t);
    }
}

impl ProbabilityModel for ForestModel {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn n_features(&self) -> Option<usize> {
        Some(self.n_features)
    }

    fn predict_proba(&self, batch: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_batch(self, batch)?;
        let n = batch.nrows();
        let mut out = DMatrix::zeros(n, self.n_classes);
        let mut x = vec![0.0; self.n_features];
        let mut p = vec![0.0; self.n_classes];
        for i in 0..n {
            for (j, v) in x.iter_mut().enumerate() {
                *v = batch[(i, j)];
            }
            self.predict_row(&x, &mut p);
            for (c, &v) in p.iter().enumerate() {
                out[(i, c)] = v;
            }
        }
        Ok(out)
    }
}

/// Fits a bagged forest of Gini-split trees. Deterministic in `seed`.
pub fn train_forest(data: &DMatrix<f64>, labels: &[usize], config: &ForestConfig, seed: u64) -> Result<ForestModel> {
    let (n, d) = data.shape();
    if labels.len() != n {
        return Err(ClimaxError::InvalidTrainingData(format!("{n} rows but {} labels", labels.len())));
    }
    if n < 2 {
        return Err(ClimaxError::InvalidTrainingData("need at least two rows".into()));
    }
    if config.n_trees == 0 || config.max_depth == 0 {
        return Err(ClimaxError::Config("n_trees and max_depth must be at least 1".into()));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(ClimaxError::InvalidTrainingData("non-finite feature value".into()));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let first = labels[0];
    if labels.iter().all(|&l| l == first) {
        return Err(ClimaxError::InvalidTrainingData("labels contain a single class".into()));
    }
    let max_features = config
        .max_features
        .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
        .clamp(1, d.max(1));

    // column-major copy for cache-friendly split search
    let columns: Vec<Vec<f64>> = (0..d).map(|j| data.column(j).iter().copied().collect()).collect();
    let builder = TreeBuilder { columns: &columns, labels, n_classes, max_features, max_depth: config.max_depth };

    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(seed, t as u64));
            let rows: Vec<usize> =
                if config.bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { (0..n).collect() };
            builder.build(rows, &mut rng)
        })
        .collect();

    Ok(ForestModel { trees, n_features: d, n_classes, config: config.clone(), seed })
}

struct TreeBuilder<'a> {
    columns: &'a [Vec<f64>],
    labels: &'a [usize],
    n_classes: usize,
    max_features: usize,
    max_depth: usize,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl TreeBuilder<'_> {
    fn build<R: Rng>(&self, rows: Vec<usize>, rng: &mut R) -> Tree {
        let mut tree = Tree { nodes: Vec::new() };
        self.grow(&mut tree, rows, 0, rng);
        tree
    }

    fn counts(&self, rows: &[usize]) -> Vec<u32> {
        let mut c = vec![0u32; self.n_classes];
        for &r in rows {
            c[self.labels[r]] += 1;
        }
        c
    }

    fn grow<R: Rng>(&self, tree: &mut Tree, rows: Vec<usize>, depth: usize, rng: &mut R) -> usize {
        let at = tree.nodes.len();
        let counts = self.counts(&rows);
        let pure = counts.iter().filter(|&&k| k > 0).count() <= 1;
        if pure || depth >= self.max_depth || rows.len() < 2 {
            tree.nodes.push(Node::Leaf { counts });
            return at;
        }
        let Some(split) = self.best_split(&rows, &counts, rng) else {
            tree.nodes.push(Node::Leaf { counts });
            return at;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| self.columns[split.feature][r] <= split.threshold);
        // placeholder, patched once the children exist
        tree.nodes.push(Node::Leaf { counts: Vec::new() });
        let left = self.grow(tree, left_rows, depth + 1, rng);
        let right = self.grow(tree, right_rows, depth + 1, rng);
        tree.nodes[at] = Node::Split { feature: split.feature, threshold: split.threshold, left, right };
        at
    }

    /// Maximizes Σ_child Σ_c n_c²/n_child, the Gini impurity reduction up to
    /// constants. Visits features in random order until `max_features`
    /// non-constant ones have been scored.
    fn best_split<R: Rng>(&self, rows: &[usize], counts: &[u32], rng: &mut R) -> Option<SplitChoice> {
        let d = self.columns.len();
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(rng);
        let total = rows.len() as f64;
        let mut best: Option<SplitChoice> = None;
        let mut visited = 0;
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
        let mut left = vec![0f64; self.n_classes];
        for &f in &order {
            if visited >= self.max_features {
                break;
            }
            let col = &self.columns[f];
            pairs.clear();
            pairs.extend(rows.iter().map(|&r| (col[r], self.labels[r])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            if pairs[0].0 == pairs[pairs.len() - 1].0 {
                continue;
            }
            visited += 1;
            left.iter_mut().for_each(|v| *v = 0.0);
            let mut left_sq = 0.0;
            let mut right_sq: f64 = counts.iter().map(|&k| (k as f64).powi(2)).sum();
            for i in 0..pairs.len() - 1 {
                let c = pairs[i].1;
                let l = left[c];
                let r = counts[c] as f64 - l;
                // move one row of class c from right to left
                left_sq += 2.0 * l + 1.0;
                right_sq += -2.0 * r + 1.0;
                left[c] = l + 1.0;
                if pairs[i].0 == pairs[i + 1].0 {
                    continue;
                }
                let nl = (i + 1) as f64;
                let score = left_sq / nl + right_sq / (total - nl);
                if best.as_ref().is_none_or(|b| score > b.score + 1e-12) {
                    let (a, b) = (pairs[i].0, pairs[i + 1].0);
                    let mut threshold = 0.5 * (a + b);
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(SplitChoice { feature: f, threshold, score });
                }
            }
        }
        best
    }
}
