mod common;

use std::collections::BTreeSet;

use climax::blackbox::{FnModel, ProbabilityModel};
use climax::evaluation::{jaccard, jaccard_ratio};
use climax::explainers::{fit_l_climax, fit_lime, forward_select, rank_features};
use climax::influence::{class_quota, sampling_probabilities};
use climax::surrogate::{balance_gmm, balance_ros, fit_gmm, label_with_blackbox, perturb, FeatureStats, KernelConfig};
use climax::util::derive_seed;
use common::{binary_probs, raw_set};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn feature_set() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::btree_set(0usize..30, 1..8).prop_map(|s| s.into_iter().collect())
}

/// (z, p1, weights) with n rows and d columns.
fn instance() -> impl Strategy<Value = (DMatrix<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..=4, 6usize..=40).prop_flat_map(|(d, n)| {
        (
            prop::collection::vec(-3.0f64..3.0, n * d).prop_map(move |v| DMatrix::from_vec(n, d, v)),
            prop::collection::vec(0.01f64..0.99, n),
            prop::collection::vec(0.05f64..1.0, n),
        )
    })
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(1e-12f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn jaccard_is_symmetric_bounded_and_exact(a in feature_set(), b in feature_set()) {
        let ab = jaccard(&a, &b).unwrap();
        prop_assert_eq!(ab.to_bits(), jaccard(&b, &a).unwrap().to_bits());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab == 1.0, a == b);
        let sa: BTreeSet<_> = a.iter().collect();
        let sb: BTreeSet<_> = b.iter().collect();
        prop_assert_eq!(ab == 0.0, sa.is_disjoint(&sb));
        let (i, u) = jaccard_ratio(&a, &b).unwrap();
        prop_assert_eq!(i, sa.intersection(&sb).count());
        prop_assert_eq!(u, sa.union(&sb).count());
    }

    #[test]
    fn sampling_probabilities_are_a_monotone_distribution(
        rho in prop::collection::vec(-5.0f64..5.0, 2..50),
        tau in 0.05f64..10.0,
    ) {
        let psi = sampling_probabilities(&rho, tau).unwrap();
        prop_assert!((psi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(psi.iter().all(|&p| p > 0.0));
        for i in 0..rho.len() {
            for j in 0..rho.len() {
                if rho[i] > rho[j] {
                    prop_assert!(psi[i] > psi[j]);
                }
            }
        }
    }

    #[test]
    fn quota_never_exceeds_class_size(q in 0.01f64..=1.0, n in 1usize..500) {
        let m = class_quota(q, n);
        prop_assert!(m <= n);
        prop_assert!(m >= (q * n as f64).ceil() as usize);
        prop_assert!(m >= n.min(2));
    }

    #[test]
    fn l_climax_classes_negate((z, p, w) in instance(), lambda in prop::sample::select(vec![0.1, 1.0])) {
        let s = raw_set(z, binary_probs(&p), w);
        let one = fit_l_climax(&s, 1, lambda, 1e-6).unwrap();
        let zero = fit_l_climax(&s, 0, lambda, 1e-6).unwrap();
        let neg: Vec<f64> = zero.phi.iter().map(|v| -v).collect();
        prop_assert!(max_rel(&one.phi, &neg) < 1e-9);
        prop_assert!((one.intercept + zero.intercept).abs() < 1e-9 * one.intercept.abs().max(1.0));
    }

    #[test]
    fn scaling_weights_and_penalty_together_changes_nothing(
        (z, p, w) in instance(),
        c in 0.1f64..20.0,
        lambda in prop::sample::select(vec![0.1, 1.0]),
    ) {
        let base = raw_set(z.clone(), binary_probs(&p), w.clone());
        let scaled = raw_set(z, binary_probs(&p), w.iter().map(|v| v * c).collect());
        let a = fit_lime(&base, 1, lambda).unwrap();
        let b = fit_lime(&scaled, 1, lambda * c).unwrap();
        prop_assert!(max_rel(&a.phi, &b.phi) < 1e-8);
        let a = fit_l_climax(&base, 1, lambda, 1e-6).unwrap();
        let b = fit_l_climax(&scaled, 1, lambda * c, 1e-6).unwrap();
        prop_assert!(max_rel(&a.phi, &b.phi) < 1e-8);
    }

    #[test]
    fn selection_with_k_equal_d_is_a_permutation((z, p, w) in instance()) {
        let d = z.ncols();
        let mut cols = forward_select(&z, &p, &w, d, 1.0).unwrap();
        cols.sort_unstable();
        prop_assert_eq!(cols, (0..d).collect::<Vec<_>>());
    }

    #[test]
    fn ranking_is_sorted_and_restricted(phi in prop::collection::vec(-2.0f64..2.0, 6), k in 1usize..=6) {
        let selected: Vec<usize> = (0..k).map(|i| (i * 5) % 6).collect();
        let ranked = rank_features(&phi, &selected);
        prop_assert_eq!(ranked.len(), k);
        for w in ranked.windows(2) {
            prop_assert!(w[0].score.abs() > w[1].score.abs()
                || (w[0].score.abs() == w[1].score.abs() && w[0].index < w[1].index));
        }
        prop_assert!(ranked.iter().all(|f| selected.contains(&f.index)));
    }
}

fn softmax_host(d: usize, classes: usize, seed: u64) -> impl ProbabilityModel {
    let w: Vec<f64> = (0..classes * d).map(|i| (((i as u64 + 1) * (seed + 7)) % 13) as f64 / 3.0 - 2.0).collect();
    FnModel::new(d, classes, move |x: &[f64]| {
        let logits: Vec<f64> = (0..classes).map(|c| (0..d).map(|j| w[c * d + j] * x[j]).sum()).collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn surrogate_sets_stay_consistent_through_balancing(
        d in 1usize..=4,
        classes in 2usize..=3,
        n in 12usize..80,
        seed in 0u64..1_000,
        width in 0.5f64..3.0,
    ) {
        let model = softmax_host(d, classes, seed);
        let x = vec![0.1; d];
        let stats = FeatureStats::new(vec![0.0; d], vec![1.0; d]).unwrap();
        let z = perturb(&x, &stats, n, 1.0, derive_seed(seed, 1)).unwrap();
        let s = label_with_blackbox(&model, z.clone(), &x, &stats, &KernelConfig::euclidean(width)).unwrap();
        s.check_consistency().unwrap();
        prop_assert_eq!(&s.z, &z);
        prop_assume!(s.classes_present() >= 2);
        let ros = balance_ros(&s, seed).unwrap();
        ros.check_consistency().unwrap();
        prop_assert_eq!(ros.z.rows(0, n), s.z.rows(0, n));
        if let Ok(g) = fit_gmm(&s, classes, 100, 1e-6, seed) {
            let (b, _) = balance_gmm(&s, &model, &g, seed).unwrap();
            b.check_consistency().unwrap();
            let counts: Vec<usize> = b.class_counts().into_iter().filter(|&c| c > 0).collect();
            prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
    }
}
