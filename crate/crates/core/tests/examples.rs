mod common;

use climax::blackbox::{FnModel, LogisticModel};
use climax::evaluation::{stability_experiment, ExplainerFn, IndexSample, StabilitySpec, TopKExplainer};
use climax::explainers::{explain, explain_with_surrogate, forward_select, CeBudget, SoftLogistic};
use climax::influence::{
    default_temperature, fit_full, influence_scores, sampling_probabilities, subsample_and_refit,
    subsample_with_influence, InfluenceConfig, SubsampleMode,
};
use climax::linalg::weighted_ridge;
use climax::surrogate::{balance_gmm, fit_gmm, label_with_blackbox, FeatureStats, KernelConfig};
use climax::util::rng_from_seed;
use climax::{Balancer, ExplainConfig, Method};
use common::{binary_probs, breast_cancer, diabetes, raw_set, reference_forest};
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng))
}

#[test]
fn bundled_datasets_have_the_published_shape() {
    let bc = breast_cancer();
    assert_eq!((bc.n_rows(), bc.n_features()), (569, 30));
    let db = diabetes();
    assert_eq!((db.n_rows(), db.n_features()), (768, 8));
    for ds in [bc, db] {
        assert_eq!(ds.n_classes(), 2);
        assert_eq!(ds.train.len() + ds.test.len(), ds.n_rows());
    }
}

#[test]
fn ridge_scalar_closed_form() {
    let z = DMatrix::from_element(4, 1, 1.0);
    let fit = weighted_ridge(&z, &[1.0; 4], &[1.0; 4], 1.0, false, &[0]).unwrap();
    assert!((fit.coef[0] - 0.8).abs() < 1e-15);
}

/// Weighted ridge RSS with an unpenalized intercept, by a direct dense solve.
fn ridge_rss(x: &DMatrix<f64>, y: &[f64], w: &[f64], lambda: f64, cols: &[usize]) -> f64 {
    let n = x.nrows();
    let p = cols.len() + 1;
    let a = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { x[(i, cols[j - 1])] });
    let wa = DMatrix::from_fn(n, p, |i, j| w[i] * a[(i, j)]);
    let mut lhs = a.transpose() * &wa;
    for j in 1..p {
        lhs[(j, j)] += lambda;
    }
    let rhs = wa.transpose() * DVector::from_column_slice(y);
    let beta = lhs.lu().solve(&rhs).unwrap();
    let r = DVector::from_column_slice(y) - &a * beta;
    (0..n).map(|i| w[i] * r[i] * r[i]).sum()
}

#[test]
fn forward_selection_matches_exhaustive_greedy_search() {
    for seed in 0..10 {
        let x = gaussian(50, 6, seed);
        let mut rng = rng_from_seed(100 + seed);
        let y: Vec<f64> = (0..50).map(|i| x[(i, 1)] - 0.7 * x[(i, 4)] + 0.3 * x[(i, 2)] + 0.5 * rng.random::<f64>()).collect();
        let w: Vec<f64> = (0..50).map(|_| rng.random_range(0.1..1.0)).collect();
        let got = forward_select(&x, &y, &w, 6, 1.0).unwrap();
        let mut chosen: Vec<usize> = Vec::new();
        for _ in 0..6 {
            let best = (0..6)
                .filter(|j| !chosen.contains(j))
                .map(|j| {
                    let mut cols = chosen.clone();
                    cols.push(j);
                    (j, ridge_rss(&x, &y, &w, 1.0, &cols))
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0;
            chosen.push(best);
        }
        assert_eq!(got, chosen, "seed {seed}");
    }
}

#[test]
fn mixture_draws_mostly_carry_their_intended_label() {
    // two well separated clusters; the black box labels by side of the midpoint
    let d = 2;
    let n = 400;
    let mut rng = rng_from_seed(3);
    let z = DMatrix::from_fn(n, d, |i, j| {
        let center = if i < 360 { -4.0 } else { 4.0 };
        let g: f64 = StandardNormal.sample(&mut rng);
        if j == 0 {
            center + g
        } else {
            g
        }
    });
    let model = FnModel::new(d, 2, |x: &[f64]| {
        let p = climax::util::sigmoid(3.0 * x[0]);
        vec![1.0 - p, p]
    });
    let stats = FeatureStats::identity(d);
    let s = label_with_blackbox(&model, z, &[-4.0, 0.0], &stats, &KernelConfig::default_for(d)).unwrap();
    assert_eq!(s.class_counts(), vec![360, 40]);
    let gmm = fit_gmm(&s, 2, 100, 1e-6, 1).unwrap();
    let (balanced, stats) = balance_gmm(&s, &model, &gmm, 2).unwrap();
    assert_eq!(balanced.class_counts(), vec![360, 360]);
    assert!(stats.match_rate() >= 0.8, "match rate {}", stats.match_rate());
}

#[test]
fn flipped_labels_are_dropped_more_often() {
    let n = 600;
    let d = 3;
    let z = gaussian(n, d, 8);
    let mut rng = rng_from_seed(9);
    let flipped: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.1).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let clean = z[(i, 0)] + 0.5 * z[(i, 1)] > 0.0;
            f64::from(u8::from(clean != flipped[i]))
        })
        .collect();
    let s = raw_set(z, binary_probs(&y), vec![1.0; n]);
    let cfg = InfluenceConfig { keep_fraction: 0.7, mode: SubsampleMode::Deterministic, ..Default::default() };
    let (_, result) = subsample_with_influence(&s, 1, &cfg, 4).unwrap();
    let dropped: Vec<usize> = (0..n).filter(|&i| !result.keep[i]).collect();
    let base = flipped.iter().filter(|&&f| f).count() as f64 / n as f64;
    let rate = dropped.iter().filter(|&&i| flipped[i]).count() as f64 / dropped.len() as f64;
    assert!(rate >= 2.0 * base, "flipped share of dropped {rate:.3}, base rate {base:.3}");
}

#[test]
fn subset_model_stays_at_par_on_benchmark_surrogates() {
    for ds in [breast_cancer(), diabetes()] {
        let forest = reference_forest(&ds);
        let stats = ds.stats();
        let cfg = ExplainConfig { method: Method::CeClimax, balancer: Balancer::Gmm, seed: 5, ..Default::default() };
        let id = ds.test[0];
        let (e, s) = explain_with_surrogate(&ds.row(id), &forest, &stats, &cfg).unwrap();
        let budget = CeBudget::default();
        let state = fit_full(&s, e.target_class, 0.1, 0.2, &budget, 6).unwrap();
        let rho = influence_scores(&state).unwrap();
        let psi = sampling_probabilities(&rho, default_temperature(&rho)).unwrap();
        let (_, r) = subsample_and_refit(&s, &state, &rho, &psi, 0.7, SubsampleMode::Deterministic, &budget, 7).unwrap();
        let cols: Vec<usize> = (0..s.n_features()).collect();
        let lr = SoftLogistic { design: &s.design, cols: &cols, rows: &state.validation, targets: &state.targets, lambda: 0.1 };
        let val = |theta: &[f64]| state.validation.iter().map(|&i| lr.point_loss(theta, i)).sum::<f64>();
        let (full, sub) = (val(&r.theta_hat), val(&r.theta_tilde));
        assert!(sub <= 1.1 * full, "{}: validation loss {sub} vs {full}", ds.name);
    }
}

#[test]
fn linear_black_box_top_feature_is_the_largest_standardized_weight() {
    let std = vec![1.0, 2.0, 0.5, 3.0];
    let stats = FeatureStats::new(vec![0.0; 4], std.clone()).unwrap();
    let weights = vec![0.5, 1.0, 0.4, 0.1];
    let model = LogisticModel { weights: weights.clone(), bias: 0.0 };
    let expected = (0..4).max_by(|&a, &b| (weights[a] * std[a]).abs().total_cmp(&(weights[b] * std[b]).abs())).unwrap();
    for seed in 0..5 {
        let cfg = ExplainConfig { method: Method::CeClimax, balancer: Balancer::None, k: 4, seed, ..Default::default() };
        let e = explain(&[0.2, -0.1, 0.3, 0.0], &model, &stats, &cfg).unwrap();
        assert_eq!(e.top_features[0].index, expected);
    }
}

#[test]
fn ignored_feature_gets_no_attribution() {
    let d = 6;
    let weights = vec![1.0, -0.8, 0.6, 0.0, 0.5, -0.4];
    let model = LogisticModel { weights, bias: 0.1 };
    let stats = FeatureStats::identity(d);
    let cfg = ExplainConfig { method: Method::LClimax, balancer: Balancer::None, lambda: Some(1.0), seed: 3, ..Default::default() };
    let e = explain(&[0.0; 6], &model, &stats, &cfg).unwrap();
    assert!(e.phi[3].abs() <= 1e-6, "phi = {:?}", e.phi);
    assert_eq!(e.top_features.len(), 5);
}

#[test]
fn explanation_serialization_is_reproducible() {
    let ds = diabetes();
    let forest = reference_forest(&ds);
    let stats = ds.stats();
    let influence = InfluenceConfig::default();
    for cfg in [
        ExplainConfig { seed: 1, n_prime: 400, ..Default::default() },
        ExplainConfig { seed: 2, n_prime: 400, influence: Some(influence), ..Default::default() },
        ExplainConfig { seed: 3, n_prime: 400, ..ExplainConfig::lime() },
    ] {
        let x = ds.row(ds.test[3]);
        let a = explain(&x, &forest, &stats, &cfg).unwrap();
        let b = explain(&x, &forest, &stats, &cfg).unwrap();
        assert_eq!(a.to_document(), b.to_document());
        assert!(a.phi.iter().all(|v| v.is_finite()));
        assert_eq!(a.top_features.len(), cfg.k.min(ds.n_features()));
        assert_eq!(a.contrast_classes, vec![1 - a.target_class]);
    }
}

/// E[J] of two independent uniform k-subsets of d, from the hypergeometric
/// law of their overlap.
fn expected_random_jaccard(d: u64, k: u64) -> f64 {
    let choose = |n: u64, r: u64| -> f64 { (0..r).map(|i| (n - i) as f64 / (i + 1) as f64).product() };
    (0..=k).map(|i| choose(k, i) * choose(d - k, k - i) / choose(d, k) * i as f64 / (2 * k - i) as f64).sum()
}

#[test]
fn random_explainer_has_the_chance_level_jaccard() {
    let oracle = expected_random_jaccard(30, 5);
    assert!((oracle - 0.099).abs() < 0.001, "oracle {oracle}");
    let random = ExplainerFn {
        label: "random".into(),
        f: |_: &[f64], _: usize, seed: u64| Ok(sample(&mut rng_from_seed(seed), 30, 5).into_vec()),
    };
    let pool: Vec<IndexSample> = (0..40).map(|i| IndexSample { id: i, x: vec![0.0; 30] }).collect();
    let spec = StabilitySpec { n_prime_grid: vec![500], repeats: 20, index_count: 10, master_seed: 12, ..Default::default() };
    let report = stability_experiment(&spec, &pool, &[&random as &dyn TopKExplainer]).unwrap();
    assert!(report.cells.iter().all(|c| c.pairs == 190));
    let mean = report.grand_mean("random", 500).unwrap();
    assert!((mean - 0.099).abs() <= 0.02, "mean {mean}");
}

#[test]
fn stability_seeds_do_not_depend_on_the_method() {
    let a = ExplainerFn { label: "a".into(), f: |_: &[f64], _: usize, seed: u64| Ok(vec![(seed % 7) as usize]) };
    let b = ExplainerFn { label: "b".into(), f: |_: &[f64], _: usize, seed: u64| Ok(vec![(seed % 7) as usize]) };
    let pool: Vec<IndexSample> = (0..5).map(|i| IndexSample { id: i, x: vec![i as f64] }).collect();
    let spec = StabilitySpec { n_prime_grid: vec![10, 20], repeats: 4, index_count: 3, master_seed: 1, ..Default::default() };
    let report = stability_experiment(&spec, &pool, &[&a as &dyn TopKExplainer, &b]).unwrap();
    for ca in report.cells.iter().filter(|c| c.method == "a") {
        let cb = report.cells.iter().find(|c| c.method == "b" && c.n_prime == ca.n_prime && c.index_id == ca.index_id).unwrap();
        assert_eq!(ca.top_sets, cb.top_sets);
    }
}
