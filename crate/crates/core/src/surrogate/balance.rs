//! Class rebalancing of a surrogate set.

use log::info;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GmmModel, Provenance, SurrogateSet};
use crate::blackbox::{simplex_violation, ProbabilityModel};
use crate::error::{ClimaxError, Result};
use crate::util::{argmax, rng_from_seed};

/// Rejection budget per missing row.
const DRAWS_PER_DEFICIT: usize = 10;

fn majority_and_check(s: &SurrogateSet) -> Result<usize> {
    if s.classes_present() < 2 {
        return Err(ClimaxError::SingleClassNeighborhood);
    }
    Ok(s.class_counts().into_iter().max().unwrap_or(0))
}

fn rows_of(s: &SurrogateSet, class: usize) -> Vec<usize> {
    (0..s.len()).filter(|&i| s.hard_labels[i] == class).collect()
}

fn oversample<R: Rng>(s: &mut SurrogateSet, pool: &[usize], count: usize, rng: &mut R) {
    let picks: Vec<usize> = (0..count).map(|_| pool[rng.random_range(0..pool.len())]).collect();
    s.duplicate_rows(&picks, Provenance::RosDuplicate);
}

/// Random oversampling: every present class is topped up to the majority
/// count with uniform draws (with replacement) from its own rows.
pub fn balance_ros(s: &SurrogateSet, seed: u64) -> Result<SurrogateSet> {
    let majority = majority_and_check(s)?;
    let counts = s.class_counts();
    let mut out = s.clone();
    let mut rng = rng_from_seed(seed);
    for (class, &count) in counts.iter().enumerate() {
        if count == 0 || count == majority {
            continue;
        }
        let pool = rows_of(s, class);
        oversample(&mut out, &pool, majority - count, &mut rng);
    }
    Ok(out)
}

/// Per-class bookkeeping from GMM oversampling.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GmmSamplingStats {
    /// Candidates drawn from the components labeled with each class.
    pub drawn: Vec<usize>,
    /// Drawn candidates whose black-box label was the intended class.
    pub matched: Vec<usize>,
    /// Candidates kept (≤ the class deficit).
    pub accepted: Vec<usize>,
    /// Rows filled by random oversampling after the budget ran out.
    pub ros_fallback: Vec<usize>,
}

impl GmmSamplingStats {
    /// Fraction of all drawn candidates that carried their intended label.
    pub fn match_rate(&self) -> f64 {
        let d: usize = self.drawn.iter().sum();
        if d == 0 {
            return f64::NAN;
        }
        self.matched.iter().sum::<usize>() as f64 / d as f64
    }
}

/// Oversamples each minority class with draws from the mixture components
/// labeled with that class, keeping candidates the black box assigns to the
/// class. Any deficit left after 10 draws per missing row is filled by random
/// oversampling; classes with no labeled component fall back to it entirely.
pub fn balance_gmm(
    s: &SurrogateSet,
    model: &dyn ProbabilityModel,
    gmm: &GmmModel,
    seed: u64,
) -> Result<(SurrogateSet, GmmSamplingStats)> {
    let majority = majority_and_check(s)?;
    let counts = s.class_counts();
    let c = s.n_classes();
    let d = s.n_features();
    let mix = &gmm.mixture;
    if mix.means.first().is_some_and(|m| m.len() != d) {
        return Err(ClimaxError::Dimension { expected: d, actual: mix.means[0].len() });
    }
    let mut stats = GmmSamplingStats {
        drawn: vec![0; c],
        matched: vec![0; c],
        accepted: vec![0; c],
        ros_fallback: vec![0; c],
    };
    let mut out = s.clone();
    let mut rng = rng_from_seed(seed);

    for (class, &count) in counts.iter().enumerate() {
        if count == 0 || count == majority {
            continue;
        }
        let deficit = majority - count;
        let comps: Vec<usize> = (0..mix.n_components()).filter(|&k| gmm.component_labels[k] == class).collect();
        let pool = rows_of(s, class);
        if comps.is_empty() {
            info!("no mixture component labeled {class}; oversampling it randomly");
            stats.ros_fallback[class] = deficit;
            oversample(&mut out, &pool, deficit, &mut rng);
            continue;
        }
        let comp_mass: f64 = comps.iter().map(|&k| mix.weights[k]).sum();
        let budget = DRAWS_PER_DEFICIT * deficit;
        let mut kept_z: Vec<Vec<f64>> = Vec::new();
        let mut kept_p: Vec<Vec<f64>> = Vec::new();
        while kept_z.len() < deficit && stats.drawn[class] < budget {
            let batch = (2 * (deficit - kept_z.len())).min(budget - stats.drawn[class]).max(1);
            let mut cand = DMatrix::zeros(batch, d);
            for b in 0..batch {
                let mut u = rng.random::<f64>() * comp_mass;
                let mut comp = *comps.last().unwrap();
                for &k in &comps {
                    if u < mix.weights[k] {
                        comp = k;
                        break;
                    }
                    u -= mix.weights[k];
                }
                let draw = mix.sample_component(comp, &mut rng);
                let mut z = s.stats.unstandardize_row(&draw);
                for &j in &s.held_constant {
                    z[j] = s.index_sample[j];
                }
                for j in 0..d {
                    cand[(b, j)] = z[j];
                }
            }
            let probs = model.predict_proba(&cand)?;
            if let Some(msg) = simplex_violation(&probs, c) {
                return Err(ClimaxError::ModelUnavailable(msg));
            }
            stats.drawn[class] += batch;
            for b in 0..batch {
                let p: Vec<f64> = probs.row(b).iter().copied().collect();
                if argmax(&p) != class {
                    continue;
                }
                stats.matched[class] += 1;
                if kept_z.len() < deficit {
                    kept_z.push(cand.row(b).iter().copied().collect());
                    kept_p.push(p);
                }
            }
        }
        stats.accepted[class] = kept_z.len();
        out.append(&kept_z, &kept_p, Provenance::GmmSample);
        let left = deficit - kept_z.len();
        if left > 0 {
            info!("class {class}: {left} rows short after the GMM draw budget; oversampling");
            stats.ros_fallback[class] = left;
            oversample(&mut out, &pool, left, &mut rng);
        }
    }
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blackbox::ConstantModel;
    use crate::surrogate::{fit_gmm, FeatureStats, KernelConfig};

    fn labeled_set(labels: &[usize], classes: usize) -> SurrogateSet {
        let n = labels.len();
        let z = DMatrix::from_fn(n, 2, |i, j| (i * (j + 1)) as f64 * 0.1);
        let probs = DMatrix::from_fn(n, classes, |i, j| if j == labels[i] { 0.9 } else { 0.1 / (classes - 1) as f64 });
        let stats = FeatureStats::identity(2);
        let kernel = KernelConfig::euclidean(1.0);
        let design = stats.standardize(&z);
        let x = vec![0.0, 0.0];
        let weights = (0..n).map(|i| kernel.weight(&x, &[design[(i, 0)], design[(i, 1)]])).collect();
        SurrogateSet {
            z,
            design,
            probs,
            hard_labels: labels.to_vec(),
            weights,
            index_sample: x,
            provenance: vec![Provenance::Bootstrap; n],
            held_constant: vec![],
            stats,
            kernel,
        }
    }

    #[test]
    fn ros_equalizes_two_classes() {
        let labels: Vec<usize> = (0..14).map(|i| usize::from(i >= 10)).collect();
        let s = labeled_set(&labels, 2);
        let b = balance_ros(&s, 1).unwrap();
        assert_eq!(b.class_counts(), vec![10, 10]);
        b.check_consistency().unwrap();
        assert!(b.provenance[14..].iter().all(|p| *p == Provenance::RosDuplicate));
    }

    #[test]
    fn ros_on_balanced_input_is_a_no_op() {
        let labels: Vec<usize> = (0..8).map(|i| i % 2).collect();
        let s = labeled_set(&labels, 2);
        assert_eq!(balance_ros(&s, 3).unwrap(), s);
    }

    #[test]
    fn ros_three_classes() {
        let mut labels = vec![0; 7];
        labels.extend([1, 1, 2]);
        let s = labeled_set(&labels, 3);
        let b = balance_ros(&s, 2).unwrap();
        assert_eq!(b.class_counts(), vec![7, 7, 7]);
        // duplicates copy a source row of the same class
        for i in s.len()..b.len() {
            let src = (0..s.len()).find(|&r| s.z.row(r) == b.z.row(i)).unwrap();
            assert_eq!(s.hard_labels[src], b.hard_labels[i]);
            assert_eq!(s.weights[src], b.weights[i]);
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let s = labeled_set(&[1; 5], 2);
        assert!(matches!(balance_ros(&s, 0), Err(ClimaxError::SingleClassNeighborhood)));
    }

    #[test]
    fn gmm_balance_with_constant_host_reports_single_class() {
        let s = labeled_set(&[0; 6], 2);
        let g = fit_gmm(&s, 2, 50, 1e-6, 0).unwrap();
        let host = ConstantModel { probabilities: vec![0.5, 0.5] };
        assert!(matches!(balance_gmm(&s, &host, &g, 0), Err(ClimaxError::SingleClassNeighborhood)));
    }
}
