use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::Result;
use crate::inference::FitData;
use crate::panel::{standardize, within_transform};

/// One completed data set, standardised and (for the fixed-effects model)
/// time-demeaned, with what is needed to map results back.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSet {
    pub y: Array1<f64>,
    pub x: Array2<f64>,
    /// Parameters absorbed outside the slopes: N when demeaned, 1 pooled.
    pub n_fixed: usize,
    pub target_observed: Vec<bool>,
    pub blocks: Vec<Range<usize>>,
    pub y_mean: f64,
    pub y_sd: f64,
    pub x_mean: Vec<f64>,
    pub x_sd: Vec<f64>,
    /// The same rows on the original scale.
    pub level: FitData,
}

/// Extracts target and covariates from a completed matrix, standardises
/// them jointly over all rows and optionally removes unit means.
pub(crate) fn prepare_set(
    values: ArrayView2<f64>,
    target_mask: &[bool],
    target: usize,
    covariates: &[usize],
    names: &[String],
    blocks: &[Range<usize>],
    unit_labels: &[String],
    demean: bool,
) -> Result<PreparedSet> {
    let mut cols = Vec::with_capacity(covariates.len() + 1);
    cols.push(target);
    cols.extend_from_slice(covariates);
    let raw = values.select(Axis(1), &cols);
    let col_names: Vec<String> = cols.iter().map(|&j| names[j].clone()).collect();
    let std = standardize(raw.view(), &col_names)?;
    let z = if demean {
        within_transform(std.values.view(), blocks, unit_labels)?.values
    } else {
        std.values
    };
    Ok(PreparedSet {
        y: z.column(0).to_owned(),
        x: z.slice(ndarray::s![.., 1..]).to_owned(),
        n_fixed: if demean { blocks.len() } else { 1 },
        target_observed: target_mask.to_vec(),
        blocks: blocks.to_vec(),
        y_mean: std.mean[0],
        y_sd: std.sd[0],
        x_mean: std.mean[1..].to_vec(),
        x_sd: std.sd[1..].to_vec(),
        level: FitData {
            y: raw.column(0).to_owned(),
            x: raw.slice(ndarray::s![.., 1..]).to_owned(),
            blocks: blocks.to_vec(),
        },
    })
}

/// Rows `rows` of a prepared set; with `centre`, each column (and the target)
/// is re-centred on the sample, which is how the pooled model's unpenalised
/// intercept is profiled out.
pub(crate) fn sample_design(set: &PreparedSet, rows: Option<&[usize]>, centre: bool) -> (Array1<f64>, Array2<f64>) {
    let (mut y, mut x) = match rows {
        Some(r) => (set.y.select(Axis(0), r), set.x.select(Axis(0), r)),
        None => (set.y.clone(), set.x.clone()),
    };
    if centre {
        let n = y.len() as f64;
        let ym = y.sum() / n;
        y.mapv_inplace(|v| v - ym);
        let xm = x.sum_axis(Axis(0)) / n;
        x -= &xm;
    }
    (y, x)
}
