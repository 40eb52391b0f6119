use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{AmirlError, Result};

/// Time-demeaned values and the per-unit means that were removed.
#[derive(Debug, Clone, PartialEq)]
pub struct DemeanedPanel {
    pub values: Array2<f64>,
    /// One row per unit block, one column per input column.
    pub unit_means: Array2<f64>,
}

/// Subtracts each unit's time mean from every column.
///
/// `blocks` lists each unit's contiguous rows; `unit_labels` is only used for
/// error messages and may be empty.
pub fn within_transform(
    values: ArrayView2<f64>,
    blocks: &[Range<usize>],
    unit_labels: &[String],
) -> Result<DemeanedPanel> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(AmirlError::Input(
            "within-transformation needs complete data".into(),
        ));
    }
    let mut out = values.to_owned();
    let mut unit_means = Array2::<f64>::zeros((blocks.len(), values.ncols()));
    for (i, block) in blocks.iter().enumerate() {
        if block.len() < 2 {
            return Err(AmirlError::FixedEffectUnidentifiable {
                unit: unit_labels.get(i).cloned().unwrap_or_else(|| i.to_string()),
                periods: block.len(),
            });
        }
        let rows = values.slice(ndarray::s![block.clone(), ..]);
        let mean = rows.sum_axis(Axis(0)) / block.len() as f64;
        for r in block.clone() {
            let mut row = out.row_mut(r);
            row -= &mean;
        }
        unit_means.row_mut(i).assign(&mean);
    }
    Ok(DemeanedPanel {
        values: out,
        unit_means,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub values: Array2<f64>,
    pub mean: Vec<f64>,
    /// Sample standard deviation (denominator n - 1).
    pub sd: Vec<f64>,
}

/// Centres each column and scales it to unit sample standard deviation.
pub fn standardize(values: ArrayView2<f64>, names: &[String]) -> Result<Standardized> {
    let n = values.nrows();
    if n < 2 {
        return Err(AmirlError::Input("standardisation needs at least 2 rows".into()));
    }
    let mut out = values.to_owned();
    let mut means = Vec::with_capacity(values.ncols());
    let mut sds = Vec::with_capacity(values.ncols());
    for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let mean = col.sum() / n as f64;
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = (ss / (n - 1) as f64).sqrt();
        if !(sd > 0.0) || !sd.is_finite() {
            let name = names.get(j).cloned().unwrap_or_else(|| format!("#{j}"));
            return Err(AmirlError::ConstantColumn(name));
        }
        col.mapv_inplace(|v| (v - mean) / sd);
        means.push(mean);
        sds.push(sd);
    }
    Ok(Standardized {
        values: out,
        mean: means,
        sd: sds,
    })
}

/// Unit intercepts implied by slope coefficients:
/// `alpha_i = mean_t(y_i) - sum_k beta_k * mean_t(x_ik)`.
pub fn recover_fixed_effects(
    beta: &[f64],
    y: ArrayView1<f64>,
    x: ArrayView2<f64>,
    blocks: &[Range<usize>],
) -> Result<Array1<f64>> {
    if beta.len() != x.ncols() {
        return Err(AmirlError::DimensionMismatch(format!(
            "{} coefficients for {} covariates",
            beta.len(),
            x.ncols()
        )));
    }
    if y.len() != x.nrows() {
        return Err(AmirlError::DimensionMismatch(format!(
            "target has {} rows, covariates {}",
            y.len(),
            x.nrows()
        )));
    }
    let mut alpha = Array1::<f64>::zeros(blocks.len());
    for (i, block) in blocks.iter().enumerate() {
        let t = block.len() as f64;
        let ybar = y.slice(ndarray::s![block.clone()]).sum() / t;
        let mut fitted = 0.0;
        for (k, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                fitted += b * x.slice(ndarray::s![block.clone(), k]).sum() / t;
            }
        }
        alpha[i] = ybar - fitted;
    }
    Ok(alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn blocks(n: usize, t: usize) -> Vec<Range<usize>> {
        (0..n).map(|i| i * t..(i + 1) * t).collect()
    }

    #[test]
    fn demeans_simple_series() {
        let d = within_transform(array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]].view(), &blocks(1, 3), &[])
            .unwrap();
        assert_eq!(d.values, array![[-1.0, 0.0], [0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(d.unit_means, array![[2.0, 5.0]]);
    }

    #[test]
    fn matches_direct_formula() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let v = Array2::from_shape_fn((12, 2), |_| rng.random::<f64>() * 10.0 - 5.0);
        let d = within_transform(v.view(), &blocks(4, 3), &[]).unwrap();
        for i in 0..4 {
            for j in 0..2 {
                let m = (v[[3 * i, j]] + v[[3 * i + 1, j]] + v[[3 * i + 2, j]]) / 3.0;
                for t in 0..3 {
                    assert!((d.values[[3 * i + t, j]] - (v[[3 * i + t, j]] - m)).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn single_period_unit_is_rejected() {
        let err = within_transform(
            array![[1.0], [2.0], [3.0]].view(),
            &[0..2, 2..3],
            &["a".into(), "b".into()],
        )
        .unwrap_err();
        assert!(matches!(err, AmirlError::FixedEffectUnidentifiable { ref unit, periods: 1 } if unit == "b"));
    }

    #[test]
    fn standardizes_with_sample_sd() {
        let s = standardize(array![[1.0], [2.0], [3.0]].view(), &["a".into()]).unwrap();
        assert_eq!(s.values, array![[-1.0], [0.0], [1.0]]);
        assert_eq!(s.sd, vec![1.0]);
        let again = standardize(s.values.view(), &["a".into()]).unwrap();
        assert!((&again.values - &s.values).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn constant_column_named_in_error() {
        let err = standardize(array![[1.0, 4.0], [2.0, 4.0]].view(), &["a".into(), "flat".into()])
            .unwrap_err();
        assert!(err.to_string().contains("flat"));
    }

    #[test]
    fn random_matrix_standardization_post_check() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let v = Array2::from_shape_fn((100, 5), |(_, j)| rng.random::<f64>() * (j + 1) as f64 + j as f64);
        let s = standardize(v.view(), &[]).unwrap();
        for col in s.values.columns() {
            let m = col.sum() / 100.0;
            let sd = (col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 99.0).sqrt();
            assert!(m.abs() <= 1e-12);
            assert!((sd - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn fixed_effects_of_zero_beta_are_unit_means() {
        let y = array![1.0, 3.0, 10.0, 20.0];
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let a = recover_fixed_effects(&[0.0], y.view(), x.view(), &blocks(2, 2)).unwrap();
        assert_eq!(a, array![2.0, 15.0]);
        assert!(recover_fixed_effects(&[0.0, 1.0], y.view(), x.view(), &blocks(2, 2)).is_err());
    }

    #[test]
    fn noiseless_fixed_effects_recovered() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (n, t) = (6, 4);
        let alpha: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let beta = [1.5, -0.7, 0.2];
        let x = Array2::from_shape_fn((n * t, 3), |_| rng.random::<f64>());
        let y = Array1::from_shape_fn(n * t, |r| alpha[r / t] + (0..3).map(|k| beta[k] * x[[r, k]]).sum::<f64>());
        let a = recover_fixed_effects(&beta, y.view(), x.view(), &blocks(n, t)).unwrap();
        for i in 0..n {
            assert!((a[i] - alpha[i]).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn within_transform_is_idempotent(vals in proptest::collection::vec(-100.0f64..100.0, 24)) {
            let v = Array2::from_shape_vec((8, 3), vals).unwrap();
            let once = within_transform(v.view(), &blocks(4, 2), &[]).unwrap();
            let twice = within_transform(once.values.view(), &blocks(4, 2), &[]).unwrap();
            for (a, b) in once.values.iter().zip(twice.values.iter()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            for m in twice.unit_means.iter() {
                prop_assert!(m.abs() <= 1e-10);
            }
        }

        #[test]
        fn fixed_effects_refold_reconstructs_levels(
            vals in proptest::collection::vec(-10.0f64..10.0, 27),
            beta in proptest::collection::vec(-3.0f64..3.0, 2),
        ) {
            // 3 units x 3 periods, column 0 = y, columns 1..3 = x
            let v = Array2::from_shape_vec((9, 3), vals).unwrap();
            let b = blocks(3, 3);
            let y = v.column(0);
            let x = v.slice(ndarray::s![.., 1..]);
            let alpha = recover_fixed_effects(&beta, y, x, &b).unwrap();
            let d = within_transform(v.view(), &b, &[]).unwrap();
            for r in 0..9 {
                let i = r / 3;
                let xb = beta[0] * x[[r, 0]] + beta[1] * x[[r, 1]];
                let xb_dd = beta[0] * d.values[[r, 1]] + beta[1] * d.values[[r, 2]];
                let level_resid = y[r] - alpha[i] - xb;
                let within_resid = d.values[[r, 0]] - xb_dd;
                prop_assert!((level_resid - within_resid).abs() < 1e-9);
                prop_assert!((alpha[i] + xb + within_resid - y[r]).abs() < 1e-9);
            }
        }
    }
}
