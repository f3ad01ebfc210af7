//! Diagonal-covariance Gaussian mixtures fitted by EM.

use log::debug;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::SurrogateSet;
use crate::error::{ClimaxError, Result};
use crate::util::rng_from_seed;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative variance floor: each component variance stays ≥ this times the
/// feature's data variance.
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    /// Mean per-row log-likelihood after each E-step, starting from the
    /// initial parameters.
    pub log_likelihood_trace: Vec<f64>,
    pub converged: bool,
    pub reseeded: bool,
}

impl GaussianMixture {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    /// log π_k + log N(x | μ_k, diag v_k) for every component.
    pub fn component_log_densities(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_components())
            .map(|k| self.weights[k].ln() + log_gauss(x, &self.means[k], &self.variances[k]))
            .collect()
    }

    /// Posterior component probabilities for one row.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let lp = self.component_log_densities(x);
        let m = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = lp.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    pub fn sample_component<R: Rng>(&self, k: usize, rng: &mut R) -> Vec<f64> {
        self.means[k]
            .iter()
            .zip(&self.variances[k])
            .map(|(m, v)| {
                let g: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * g
            })
            .collect()
    }
}

/// A mixture fitted on a surrogate set's design coordinates, with each
/// component labeled by the majority hard label of the rows it owns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub mixture: GaussianMixture,
    pub component_labels: Vec<usize>,
}

fn log_gauss(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut s = 0.0;
    for ((xi, m), v) in x.iter().zip(mean).zip(var) {
        s += -0.5 * (LN_2PI + v.ln()) - (xi - m).powi(2) / (2.0 * v);
    }
    s
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Kahan-compensated mean.
fn stable_mean(xs: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &x in xs {
        let y = x - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum / xs.len() as f64
}

struct Em {
    rows: Vec<Vec<f64>>,
    floor: Vec<f64>,
    global_var: Vec<f64>,
    max_iter: usize,
    tol: f64,
}

impl Em {
    /// E-step: responsibilities and per-row log-likelihoods.
    fn expect(&self, gm: &GaussianMixture) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut resp = Vec::with_capacity(self.rows.len());
        let mut ll = Vec::with_capacity(self.rows.len());
        for x in &self.rows {
            let lp = gm.component_log_densities(x);
            let total = log_sum_exp(&lp);
            resp.push(lp.iter().map(|v| (v - total).exp()).collect());
            ll.push(total);
        }
        (resp, ll)
    }

    fn maximize(&self, gm: &mut GaussianMixture, resp: &[Vec<f64>]) {
        let n = self.rows.len() as f64;
        let d = self.floor.len();
        for k in 0..gm.n_components() {
            let nk: f64 = resp.iter().map(|r| r[k]).sum();
            if nk < 1e-300 {
                // keeping the old mean/variance is still a valid (generalized) M-step
                gm.weights[k] = nk / n;
                continue;
            }
            let mut mean = vec![0.0; d];
            for (x, r) in self.rows.iter().zip(resp) {
                for j in 0..d {
                    mean[j] += r[k] * x[j];
                }
            }
            mean.iter_mut().for_each(|m| *m /= nk);
            let mut var = vec![0.0; d];
            for (x, r) in self.rows.iter().zip(resp) {
                for j in 0..d {
                    var[j] += r[k] * (x[j] - mean[j]).powi(2);
                }
            }
            for j in 0..d {
                var[j] = (var[j] / nk).max(self.floor[j]);
            }
            gm.weights[k] = nk / n;
            gm.means[k] = mean;
            gm.variances[k] = var;
        }
        let s: f64 = gm.weights.iter().sum();
        gm.weights.iter_mut().for_each(|w| *w = (*w / s).max(f64::MIN_POSITIVE));
    }

    fn run(&self, gm: &mut GaussianMixture) -> Vec<Vec<f64>> {
        gm.log_likelihood_trace.clear();
        gm.converged = false;
        let (mut resp, ll) = self.expect(gm);
        gm.log_likelihood_trace.push(stable_mean(&ll));
        for _ in 0..self.max_iter {
            self.maximize(gm, &resp);
            let (r, ll) = self.expect(gm);
            resp = r;
            let cur = stable_mean(&ll);
            let prev = *gm.log_likelihood_trace.last().unwrap();
            gm.log_likelihood_trace.push(cur);
            if (cur - prev).abs() < self.tol {
                gm.converged = true;
                break;
            }
        }
        resp
    }

    fn kmeans_pp<R: Rng>(&self, k: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let n = self.rows.len();
        let mut centers = vec![self.rows[rng.random_range(0..n)].clone()];
        let mut d2: Vec<f64> = self.rows.iter().map(|x| sq_dist(x, &centers[0])).collect();
        while centers.len() < k {
            let total: f64 = d2.iter().sum();
            let pick = if total > 0.0 {
                let mut u = rng.random::<f64>() * total;
                let mut idx = n - 1;
                for (i, &w) in d2.iter().enumerate() {
                    if u < w {
                        idx = i;
                        break;
                    }
                    u -= w;
                }
                idx
            } else {
                rng.random_range(0..n)
            };
            let c = self.rows[pick].clone();
            for (x, dd) in self.rows.iter().zip(d2.iter_mut()) {
                *dd = dd.min(sq_dist(x, &c));
            }
            centers.push(c);
        }
        centers
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn owners(resp: &[Vec<f64>]) -> Vec<usize> {
    resp.iter().map(|r| crate::util::argmax(r)).collect()
}

/// Fits a K-component diagonal mixture to the rows of `data`.
///
/// Seeding follows k-means++; EM stops when the mean log-likelihood improves
/// by less than `tol` or after `max_iter` iterations. A component that ends
/// up owning no rows is re-seeded at the worst-explained row once; if that
/// happens again the fit fails with `DegenerateComponent`.
pub fn fit_mixture(data: &DMatrix<f64>, k: usize, max_iter: usize, tol: f64, seed: u64) -> Result<GaussianMixture> {
    let (n, d) = data.shape();
    if k == 0 || n < k {
        return Err(ClimaxError::Config(format!("need n >= K >= 1, got n = {n}, K = {k}")));
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|i| data.row(i).iter().copied().collect()).collect();
    let global_var: Vec<f64> = (0..d)
        .map(|j| {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n as f64
        })
        .collect();
    let floor: Vec<f64> = global_var.iter().map(|v| (VARIANCE_FLOOR * v).max(1e-12)).collect();
    let em = Em { rows, floor, global_var, max_iter, tol };

    let mut rng = rng_from_seed(seed);
    let centers = em.kmeans_pp(k, &mut rng);
    let init_var: Vec<f64> = em.global_var.iter().zip(&em.floor).map(|(v, f)| v.max(*f)).collect();
    let mut gm = GaussianMixture {
        weights: vec![1.0 / k as f64; k],
        means: centers,
        variances: vec![init_var.clone(); k],
        log_likelihood_trace: Vec::new(),
        converged: false,
        reseeded: false,
    };

    let resp = em.run(&mut gm);
    let own = owners(&resp);
    let empty: Vec<usize> = (0..k).filter(|c| !own.contains(c)).collect();
    if empty.is_empty() {
        return Ok(gm);
    }

    debug!("re-seeding empty mixture components {empty:?}");
    let (_, ll) = em.expect(&gm);
    let mut worst: Vec<usize> = (0..n).collect();
    worst.sort_by(|&a, &b| ll[a].total_cmp(&ll[b]).then(a.cmp(&b)));
    for (slot, &comp) in empty.iter().enumerate() {
        gm.means[comp] = em.rows[worst[slot]].clone();
        gm.variances[comp] = init_var.clone();
    }
    gm.weights = vec![1.0 / k as f64; k];
    gm.reseeded = true;
    let resp = em.run(&mut gm);
    let own = owners(&resp);
    if let Some(c) = (0..k).find(|c| !own.contains(c)) {
        return Err(ClimaxError::DegenerateComponent(c));
    }
    Ok(gm)
}

/// Fits a mixture on the surrogate design and labels each component with the
/// majority hard label among the rows it owns (lowest class on ties).
pub fn fit_gmm(s: &SurrogateSet, k: usize, max_iter: usize, tol: f64, seed: u64) -> Result<GmmModel> {
    let mixture = fit_mixture(&s.design, k, max_iter, tol, seed)?;
    let c = s.n_classes();
    let mut votes = vec![vec![0usize; c]; k];
    for i in 0..s.len() {
        let x: Vec<f64> = s.design.row(i).iter().copied().collect();
        let owner = crate::util::argmax(&mixture.responsibilities(&x));
        votes[owner][s.hard_labels[i]] += 1;
    }
    let component_labels = votes
        .iter()
        .map(|v| {
            let mut best = 0;
            for (cls, &cnt) in v.iter().enumerate() {
                if cnt > v[best] {
                    best = cls;
                }
            }
            best
        })
        .collect();
    Ok(GmmModel { mixture, component_labels })
}
