mod common;

use amirl_core::trees::{
    fit_classification_tree, fit_lmm_on_leaves, fit_regression_tree, fit_reem, predict_class,
    LmmControls, ReemControls, TreeControls,
};
use common::{no_unit_variation, with_unit_effects};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn reem_without_unit_variation_is_a_plain_tree() {
    for seed in 0..5 {
        let (x, y, unit) = no_unit_variation(seed, 20, 6);
        let m = fit_reem(x.view(), y.view(), &unit, 20, ReemControls::default()).unwrap();
        let tree = fit_regression_tree(x.view(), y.view(), TreeControls::default()).unwrap();
        assert!(m.converged && m.iterations <= 2, "seed {seed}: {} iterations", m.iterations);
        assert!(m.lmm.intercept_variance <= 1e-6);
        for r in 0..y.len() {
            let d = (m.predict(x.row(r), Some(unit[r])) - tree.predict(x.row(r))).abs();
            assert!(d <= 1e-8, "seed {seed}, row {r}: {d}");
        }
    }
}

#[test]
fn pure_unit_effect_is_absorbed_by_intercepts() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (units, t) = (15, 6);
    let alpha: Vec<f64> = (0..units).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    let x = Array2::from_shape_fn((units * t, 3), |_| rng.sample::<f64, _>(StandardNormal));
    let y = Array1::from_shape_fn(units * t, |r| alpha[r / t]);
    let unit: Vec<usize> = (0..units * t).map(|r| r / t).collect();
    let m = fit_reem(x.view(), y.view(), &unit, units, ReemControls::default()).unwrap();
    for r in 0..y.len() {
        assert!((m.predict(x.row(r), Some(unit[r])) - y[r]).abs() <= 1e-6);
    }
}

#[test]
fn restricted_likelihood_does_not_decrease() {
    for seed in 0..10 {
        let (x, y, unit) = with_unit_effects(seed, 20, 6);
        let controls = ReemControls::default();
        let m = fit_reem(x.view(), y.view(), &unit, 20, controls).unwrap();
        for w in m.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - controls.tol, "seed {seed}: {:?}", m.loglik_trace);
        }
    }
}

#[test]
fn final_leaves_carry_mixed_model_means() {
    let (x, y, unit) = with_unit_effects(3, 12, 5);
    let m = fit_reem(x.view(), y.view(), &unit, 12, ReemControls::default()).unwrap();
    assert_eq!(m.tree.leaf_values(), m.lmm.leaf_means);
    let row = x.row(0);
    assert_eq!(m.predict(row, Some(0)) - m.predict(row, None), m.lmm.unit_effects[0]);
}

#[test]
fn lmm_without_unit_variance_matches_leaf_averages() {
    // residual unit means are zero within each leaf, so REML sits on the boundary
    let leaf = vec![0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1];
    let unit = vec![0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2];
    let y = vec![1.0, 3.0, 5.0, 7.0, 0.5, 3.5, 6.5, 5.5, 2.5, 1.5, 4.0, 8.0];
    let fit = fit_lmm_on_leaves(&leaf, &y, &unit, 2, 3, LmmControls::default()).unwrap();
    assert!(fit.intercept_variance <= 1e-6);
    let mean = |p: usize| {
        let v: Vec<f64> = (0..12).filter(|&r| leaf[r] == p).map(|r| y[r]).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!((fit.leaf_means[0] - mean(0)).abs() < 1e-8);
    assert!((fit.leaf_means[1] - mean(1)).abs() < 1e-8);
}

#[test]
fn separable_classes_are_fit_exactly() {
    let x = Array2::from_shape_fn((40, 2), |(r, j)| if j == 1 { r as f64 } else { (r % 7) as f64 });
    let y = Array1::from_shape_fn(40, |r| if r >= 20 { 1.0 } else { 0.0 });
    let tree = fit_classification_tree(x.view(), y.view(), TreeControls { cp: 0.0, ..TreeControls::default() }).unwrap();
    for r in 0..40 {
        assert_eq!(predict_class(&tree, x.row(r)).round(), y[r]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn row_order_does_not_change_the_tree(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 60;
        let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-2.0f64..2.0));
        let y = Array1::from_shape_fn(n, |r| x[[r, 1]].signum() + 0.2 * rng.sample::<f64, _>(StandardNormal));
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let xp = x.select(ndarray::Axis(0), &perm);
        let yp = y.select(ndarray::Axis(0), &perm);
        let a = fit_regression_tree(x.view(), y.view(), TreeControls::default()).unwrap();
        let b = fit_regression_tree(xp.view(), yp.view(), TreeControls::default()).unwrap();
        prop_assert_eq!(a.structure(), b.structure());
    }

    #[test]
    fn leaf_predictions_are_leaf_means(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 50;
        let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(0.0..1.0));
        let y = Array1::from_shape_fn(n, |r| 3.0 * x[[r, 0]] + rng.random_range(0.0..0.5));
        let tree = fit_regression_tree(x.view(), y.view(), TreeControls { cp: 0.0, ..TreeControls::default() }).unwrap();
        let mut sums = vec![0.0; tree.n_leaves()];
        let mut counts = vec![0usize; tree.n_leaves()];
        for r in 0..n {
            let l = tree.leaf_of(x.row(r));
            sums[l] += y[r];
            counts[l] += 1;
        }
        prop_assert_eq!(counts.clone(), tree.leaf_sizes());
        for l in 0..tree.n_leaves() {
            prop_assert!((sums[l] / counts[l] as f64 - tree.leaf_values()[l]).abs() < 1e-10);
        }
    }
}
