mod common;

use common::*;
use deepif::gaussian::CovarianceMode;
use deepif::{
    average_path_length, evaluate, ClassForestBank, FeatureMatrix, ForestParams,
    GaussianClassModel, GaussianParams, IsolationForest, IsolationTree, LabeledDataset, Node,
    Ridge,
};
use proptest::prelude::*;
use rand::Rng;

fn percentile(mut v: Vec<f64>, p: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    v[((p * (v.len() - 1) as f64).floor()) as usize]
}

fn small_params(n_estimators: usize, seed: u64) -> ForestParams {
    ForestParams {
        n_estimators,
        subsample_size: 64,
        ..ForestParams::default().with_seed(seed)
    }
}

#[test]
fn c_of_256() {
    let c: f64 = average_path_length(256);
    assert!((c - 10.2445).abs() < 1e-3);
    assert!((c - average_path_length_oracle(256)).abs() < 1e-12);
}

#[test]
fn handmade_tree_path_lengths() {
    let leaf = IsolationTree::<f64>::from_nodes(vec![Node::Leaf { n_samples: 256 }], 2, 8).unwrap();
    assert!((leaf.path_length(&[5.0, -1.0]).unwrap() - 10.2445).abs() < 1e-3);

    let nodes = vec![
        Node::Internal {
            feature: 1,
            split: 0.0,
            left: 1,
            right: 2,
        },
        Node::Leaf { n_samples: 1 },
        Node::Leaf { n_samples: 3 },
    ];
    let tree = IsolationTree::from_nodes(nodes, 2, 2).unwrap();
    assert_eq!(tree.path_length(&[0.0, -1.0]).unwrap(), 1.0);
    let want = 1.0 + average_path_length_oracle(3);
    assert!((tree.path_length(&[0.0, 1.0]).unwrap() - want).abs() < 1e-12);
}

#[test]
fn far_query_scores_below_first_percentile() {
    for seed in 0..30 {
        let mut r = rng(seed);
        let inliers = normal_rows(&mut r, 500, 8, &[0.0; 8], 1.0);
        let forest =
            IsolationForest::fit(&matrix(&inliers), &ForestParams::default().with_seed(seed))
                .unwrap();
        let p1 = percentile(forest.score_samples(&matrix(&inliers)).unwrap(), 0.01);
        let s = forest.score_one(&[8.0; 8]).unwrap();
        assert!(s < p1, "seed {seed}: {s} >= {p1}");
    }
}

#[test]
fn gap_between_two_classes_scores_low() {
    for seed in 0..30 {
        let mut r = rng(100 + seed);
        let mut rows = normal_rows(&mut r, 300, 2, &[-5.0, -5.0], 1.0);
        rows.extend(normal_rows(&mut r, 300, 2, &[5.0, 5.0], 1.0));
        let labels: Vec<usize> = (0..600).map(|i| i / 300).collect();
        let data =
            LabeledDataset::new(matrix(&rows), labels, vec!["a".into(), "b".into()]).unwrap();
        let bank = ClassForestBank::fit(&data, &ForestParams::default().with_seed(seed)).unwrap();
        let mut valid = normal_rows(&mut r, 100, 2, &[-5.0, -5.0], 1.0);
        valid.extend(normal_rows(&mut r, 100, 2, &[5.0, 5.0], 1.0));
        let p5 = percentile(bank.score(&matrix(&valid)).unwrap(), 0.05);
        let s = bank.score(&matrix(&[vec![0.0, 0.0]])).unwrap()[0];
        assert!(s < p5, "seed {seed}: {s} >= {p5}");
    }
}

#[test]
fn extreme_outliers_score_below_training_minimum() {
    for seed in 0..30 {
        let mut r = rng(200 + seed);
        let rows = normal_rows(&mut r, 300, 4, &[0.0; 4], 1.0);
        let far = matrix(&[vec![50.0; 4], vec![-50.0, 50.0, -50.0, 50.0]]);
        let data = LabeledDataset::new(matrix(&rows), vec![0; 300], vec!["a".into()]).unwrap();

        let bank = ClassForestBank::fit(&data, &small_params(100, seed)).unwrap();
        let lo = bank
            .score(data.features())
            .unwrap()
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        assert!(
            bank.score(&far).unwrap().iter().all(|&s| s < lo),
            "deepif seed {seed}"
        );

        let maha = GaussianClassModel::fit(&data, &GaussianParams::default()).unwrap();
        let lo = maha
            .score(data.features())
            .unwrap()
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        assert!(
            maha.score(&far).unwrap().iter().all(|&s| s < lo),
            "mahalanobis seed {seed}"
        );
    }
}

#[test]
fn same_distribution_auroc_is_one_half() {
    let mut r = rng(9);
    let a: Vec<f64> = (0..10000).map(|_| r.random()).collect();
    let b: Vec<f64> = (0..10000).map(|_| r.random()).collect();
    let auroc = evaluate(&a, &b).unwrap().auroc;
    assert!((auroc - 0.5).abs() <= 0.02, "{auroc}");
}

#[test]
fn tied_covariance_matches_sample_statistics() {
    let mut r = rng(4);
    let mut rows = normal_rows(&mut r, 40, 3, &[1.0, 2.0, 3.0], 2.0);
    rows.extend(normal_rows(&mut r, 25, 3, &[-1.0, 0.0, 4.0], 0.5));
    let labels: Vec<usize> = (0..65).map(|i| usize::from(i >= 40)).collect();
    let data =
        LabeledDataset::new(matrix(&rows), labels.clone(), vec!["a".into(), "b".into()]).unwrap();
    let params = GaussianParams {
        mode: CovarianceMode::Tied,
        ridge: Ridge::Fixed(0.0),
    };
    let model = GaussianClassModel::fit(&data, &params).unwrap();

    let mean = |k: usize| -> Vec<f64> {
        let members: Vec<&Vec<f64>> = rows
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l == k)
            .map(|(x, _)| x)
            .collect();
        (0..3)
            .map(|j| members.iter().map(|x| x[j]).sum::<f64>() / members.len() as f64)
            .collect()
    };
    let means = [mean(0), mean(1)];
    let mut cov = vec![0.0; 9];
    for (x, &l) in rows.iter().zip(&labels) {
        for i in 0..3 {
            for j in 0..3 {
                cov[i * 3 + j] += (x[i] - means[l][i]) * (x[j] - means[l][j]) / 65.0;
            }
        }
    }
    for (got, want) in model.means().iter().zip(&means) {
        for (a, b) in got.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    let oracle = MahalanobisOracle::new(&means, &[cov]);
    let queries = normal_rows(&mut r, 20, 3, &[0.0; 3], 3.0);
    for (x, s) in queries.iter().zip(model.score(&matrix(&queries)).unwrap()) {
        let want = oracle.score(x);
        assert!(((s - want) / want).abs() < 1e-9, "{s} vs {want}");
    }
}

fn rows_strategy(max_rows: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    proptest::collection::vec(proptest::collection::vec(-100.0f64..100.0, d), 2..max_rows)
}

fn scores_strategy() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(
        prop_oneof![(-5i32..5).prop_map(f64::from), -5.0f64..5.0],
        1..60,
    )
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn forest_scores_are_bounded_and_follow_path_lengths(
        rows in rows_strategy(80, 3),
        queries in rows_strategy(20, 3),
        seed in any::<u64>(),
    ) {
        let c = path_length_table(128);
        let forest = IsolationForest::fit(&matrix(&rows), &small_params(12, seed)).unwrap();
        let q = matrix(&queries);
        let scores = forest.score_samples(&q).unwrap();
        let means: Vec<f64> = queries.iter().map(|x| forest.mean_path_length(x).unwrap()).collect();
        for (i, x) in queries.iter().enumerate() {
            prop_assert!(scores[i] > -0.5 && scores[i] < 0.5);
            prop_assert!((scores[i] - forest_score_oracle(&forest, x, &c)).abs() <= 1e-12);
            for j in 0..queries.len() {
                if means[i] < means[j] {
                    prop_assert!(scores[i] <= scores[j]);
                }
            }
        }
    }

    #[test]
    fn bank_score_is_max_and_monotone_in_classes(
        rows in rows_strategy(60, 2),
        queries in rows_strategy(15, 2),
        seed in any::<u64>(),
    ) {
        let n = rows.len();
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        prop_assume!(n >= 4);
        let names = vec!["a".to_string(), "b".to_string()];
        let data = LabeledDataset::new(matrix(&rows), labels, names.clone()).unwrap();
        let bank = ClassForestBank::fit(&data, &small_params(8, seed)).unwrap();
        let q = matrix(&queries);
        let per = bank.per_class_scores(&q).unwrap();
        let total = bank.score(&q).unwrap();
        for (i, &s) in total.iter().enumerate() {
            let m = per.iter().map(|c| c[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(s, m);
        }
        let single = ClassForestBank::from_forests(vec![bank.forests()[0].clone()], vec![names[0].clone()], bank.params().clone()).unwrap();
        for (a, b) in single.score(&q).unwrap().iter().zip(&total) {
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn metrics_invariant_under_monotone_maps(xs in scores_strategy(), ys in scores_strategy()) {
        let base = evaluate(&xs, &ys).unwrap();
        let map = |v: &[f64]| -> Vec<f64> { v.iter().map(|&s| (s / 3.0).exp() * 2.0 - 7.0).collect() };
        let mapped = evaluate(&map(&xs), &map(&ys)).unwrap();
        prop_assert!((base.auroc - mapped.auroc).abs() < 1e-12);
        prop_assert!((base.aupr_in - mapped.aupr_in).abs() < 1e-12);
        prop_assert!((base.aupr_out - mapped.aupr_out).abs() < 1e-12);
        prop_assert_eq!(base.tnr_at_95tpr, mapped.tnr_at_95tpr);
        prop_assert!((base.auroc - auroc_pairwise(&xs, &ys)).abs() < 1e-12);
        for v in [base.auroc, base.aupr_in, base.aupr_out, base.tnr_at_95tpr] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn swapping_roles_complements_auroc(xs in scores_strategy(), ys in scores_strategy()) {
        let ab = evaluate(&xs, &ys).unwrap();
        let ba = evaluate(&ys, &xs).unwrap();
        prop_assert!((ab.auroc + ba.auroc - 1.0).abs() < 1e-12);
        let neg = |v: &[f64]| -> Vec<f64> { v.iter().map(|s| -s).collect() };
        let flipped = evaluate(&neg(&ys), &neg(&xs)).unwrap();
        prop_assert!((flipped.aupr_in - ab.aupr_out).abs() < 1e-12);
    }

    #[test]
    fn raising_out_scores_lowers_tnr(xs in scores_strategy(), ys in scores_strategy(), bump in 0.0f64..3.0) {
        let before = evaluate(&xs, &ys).unwrap();
        let raised: Vec<f64> = ys.iter().map(|s| s + bump).collect();
        let after = evaluate(&xs, &raised).unwrap();
        prop_assert!(after.tnr_at_95tpr <= before.tnr_at_95tpr);
        prop_assert!(after.auroc <= before.auroc + 1e-12);
    }

    #[test]
    fn mahalanobis_translation_invariance(
        rows in rows_strategy(40, 3),
        shift in proptest::collection::vec(-50.0f64..50.0, 3),
        queries in rows_strategy(10, 3),
    ) {
        prop_assume!(rows.len() >= 4);
        let labels: Vec<usize> = (0..rows.len()).map(|i| i % 2).collect();
        let names = vec!["a".to_string(), "b".to_string()];
        let moved = |v: &[Vec<f64>]| -> FeatureMatrix<f64> {
            matrix(&v.iter().map(|x| x.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect::<Vec<Vec<f64>>>())
        };
        let params = GaussianParams { mode: CovarianceMode::Tied, ridge: Ridge::Fixed(1.0) };
        let m0 = GaussianClassModel::fit(&LabeledDataset::new(matrix(&rows), labels.clone(), names.clone()).unwrap(), &params).unwrap();
        let m1 = GaussianClassModel::fit(&LabeledDataset::new(moved(&rows), labels, names).unwrap(), &params).unwrap();
        let s0 = m0.score(&matrix(&queries)).unwrap();
        let s1 = m1.score(&moved(&queries)).unwrap();
        for (a, b) in s0.iter().zip(&s1) {
            prop_assert!(*a <= 0.0 && *b <= 0.0);
            prop_assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()));
        }
    }
}
