use amirl_core::datagen::{generate, ScenarioSpec};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += (x - ma) * (y - mb);
        aa += (x - ma).powi(2);
        bb += (y - mb).powi(2);
    }
    ab / (aa * bb).sqrt()
}

/// Solves the normal equations by Gauss-Jordan elimination with pivoting.
fn ols(x: &Array2<f64>, y: &Array1<f64>) -> Vec<f64> {
    let p = x.ncols();
    let mut a = x.t().dot(x);
    let mut b = x.t().dot(y);
    for c in 0..p {
        let piv = (c..p).max_by(|&i, &j| a[[i, c]].abs().total_cmp(&a[[j, c]].abs())).unwrap();
        for k in 0..p {
            a.swap([c, k], [piv, k]);
        }
        b.swap(c, piv);
        for r in 0..p {
            if r != c {
                let f = a[[r, c]] / a[[c, c]];
                for k in 0..p {
                    a[[r, k]] -= f * a[[c, k]];
                }
                b[r] -= f * b[c];
            }
        }
    }
    (0..p).map(|c| b[c] / a[[c, c]]).collect()
}

#[test]
fn masked_share_matches_the_rate() {
    for (rate, seed) in [(0.1, 1), (0.3, 2), (0.5, 3)] {
        let spec = ScenarioSpec { n_units: 100, n_periods: 10, n_covariates: 10, support: vec![(0, 1.0)], missing_rate: rate, seed, ..Default::default() };
        let (panel, truth) = generate(&spec).unwrap();
        assert!((truth.masked_fraction() - rate).abs() <= 0.02, "rate {rate}: {}", truth.masked_fraction());
        assert_eq!(panel.n_missing(), truth.masked.len());
        for &(r, c) in &truth.masked {
            assert!(panel.values()[[r, c]].is_nan());
        }
    }
}

#[test]
fn block_correlation_is_rho() {
    for rho in [0.0, 0.5, 0.8] {
        let spec = ScenarioSpec {
            n_units: 400,
            n_periods: 10,
            n_covariates: 6,
            support: vec![(0, 1.0)],
            block_size: 3,
            rho,
            missing_rate: 0.0,
            seed: 11,
            ..Default::default()
        };
        let (panel, _) = generate(&spec).unwrap();
        let col = |j: usize| panel.column(j).to_vec();
        assert!((corr(&col(1), &col(2)) - rho).abs() < 0.05, "rho {rho}");
        assert!((corr(&col(2), &col(3)) - rho).abs() < 0.05, "rho {rho}");
        assert!(corr(&col(1), &col(4)).abs() < 0.05);
    }
}

#[test]
fn noiseless_within_ols_recovers_beta() {
    let spec = ScenarioSpec { noise_scale: 0.0, missing_rate: 0.0, n_covariates: 8, support: vec![(0, 1.5), (3, -2.0), (6, 0.25)], ..Default::default() };
    let (panel, truth) = generate(&spec).unwrap();
    let t = spec.n_periods;
    let mut v = panel.values().to_owned();
    for b in panel.unit_blocks() {
        for j in 0..v.ncols() {
            let m = b.clone().map(|r| v[[r, j]]).sum::<f64>() / t as f64;
            for r in b.clone() {
                v[[r, j]] -= m;
            }
        }
    }
    let y = v.column(0).to_owned();
    let x = v.slice(ndarray::s![.., 1..]).to_owned();
    let beta = ols(&x, &y);
    for (a, b) in beta.iter().zip(&truth.beta) {
        assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
    }
    // levels minus the slope part give the unit effects
    for (i, b) in panel.unit_blocks().into_iter().enumerate() {
        for r in b {
            let xb: f64 = (0..8).map(|k| truth.beta[k] * panel.values()[[r, k + 1]]).sum();
            assert!((panel.values()[[r, 0]] - xb - truth.alpha[i]).abs() < 1e-10);
        }
    }
}

#[test]
fn bad_scenarios_are_rejected() {
    assert!(generate(&ScenarioSpec { rho: 1.2, ..Default::default() }).is_err());
    assert!(generate(&ScenarioSpec { support: vec![(99, 1.0)], ..Default::default() }).is_err());
    assert!(generate(&ScenarioSpec { missing_rate: 0.95, ..Default::default() }).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn same_seed_same_draw(seed in 0u64..10_000) {
        let spec = ScenarioSpec { n_units: 6, n_periods: 3, n_covariates: 5, support: vec![(1, 1.0)], seed, ..Default::default() };
        let (a, ta) = generate(&spec).unwrap();
        let (b, tb) = generate(&spec).unwrap();
        prop_assert_eq!(&ta, &tb);
        prop_assert!(a.values().iter().zip(b.values().iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let (_, tc) = generate(&ScenarioSpec { seed: seed + 1, ..spec }).unwrap();
        prop_assert_ne!(ta.clean_values, tc.clean_values);
    }

    #[test]
    fn driver_and_observed_cells_stay_clean(seed in 0u64..10_000, rate in 0.0f64..0.6) {
        let spec = ScenarioSpec { n_units: 10, n_periods: 4, n_covariates: 5, support: vec![(0, 1.0)], missing_rate: rate, seed, ..Default::default() };
        let (panel, truth) = generate(&spec).unwrap();
        let driver = spec.driver() + 1;
        prop_assert!(truth.masked.iter().all(|&(_, c)| c != driver));
        for (r, row) in truth.clean_values.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                let got = panel.values()[[r, c]];
                prop_assert!(got.is_nan() || got == v);
            }
        }
    }
}
