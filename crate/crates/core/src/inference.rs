//! Goodness of fit and BCa bootstrap intervals.

use std::ops::Range;

use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{AmirlError, Result};
use crate::seed::{rng_for, Stage};

/// One complete data set on its original scale.
#[derive(Debug, Clone, PartialEq)]
pub struct FitData {
    pub y: Array1<f64>,
    pub x: Array2<f64>,
    pub blocks: Vec<Range<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FitModel {
    /// Unit fixed effects recovered from the slopes.
    FixedEffects,
    /// Common intercept for all rows.
    Pooled { intercept: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FitStats {
    pub r2_overall: f64,
    pub r2_overall_adj: f64,
    pub r2_within: f64,
    pub r2_within_adj: f64,
}

fn block_demean(v: &Array1<f64>, blocks: &[Range<usize>]) -> Array1<f64> {
    let mut out = v.clone();
    for b in blocks {
        let mean = v.slice(ndarray::s![b.clone()]).sum() / b.len() as f64;
        out.slice_mut(ndarray::s![b.clone()]).mapv_inplace(|x| x - mean);
    }
    out
}

/// R-squared statistics of `beta` (original scale), averaged over the data
/// sets. Within statistics use the time-demeaned data; overall statistics
/// use levels with the fixed effects (or the pooled intercept) folded back.
/// Adjusted forms count `K` slopes within and `N + K` parameters overall
/// (`1 + K` for the pooled model).
pub fn fit_statistics(sets: &[FitData], beta: &[f64], model: FitModel) -> Result<FitStats> {
    if sets.is_empty() {
        return Err(AmirlError::NoData);
    }
    let k = beta.iter().filter(|b| **b != 0.0).count() as f64;
    let mut acc = FitStats::default();
    for d in sets {
        if d.x.ncols() != beta.len() || d.x.nrows() != d.y.len() {
            return Err(AmirlError::DimensionMismatch("fit data and coefficients disagree".into()));
        }
        let n = d.y.len() as f64;
        let xb = d.x.dot(&Array1::from(beta.to_vec()));
        let y_dd = block_demean(&d.y, &d.blocks);
        let xb_dd = block_demean(&xb, &d.blocks);
        let tss_within: f64 = y_dd.iter().map(|v| v * v).sum();
        let ybar = d.y.sum() / n;
        let tss_levels: f64 = d.y.iter().map(|v| (v - ybar).powi(2)).sum();
        if !(tss_levels > 0.0) {
            return Err(AmirlError::Numerical("target has zero variance".into()));
        }
        let rss_within: f64 = y_dd.iter().zip(xb_dd.iter()).map(|(a, b)| (a - b).powi(2)).sum();
        let (rss_levels, n_fixed) = match model {
            FitModel::FixedEffects => (rss_within, d.blocks.len() as f64),
            FitModel::Pooled { intercept } => (
                d.y.iter().zip(xb.iter()).map(|(a, b)| (a - intercept - b).powi(2)).sum(),
                1.0,
            ),
        };
        let r2_within = if tss_within > 0.0 { 1.0 - rss_within / tss_within } else { 0.0 };
        let r2_overall = 1.0 - rss_levels / tss_levels;
        acc.r2_within += r2_within;
        acc.r2_within_adj += 1.0 - (1.0 - r2_within) * (n - 1.0) / (n - k - 1.0);
        acc.r2_overall += r2_overall;
        acc.r2_overall_adj += 1.0 - (1.0 - r2_overall) * (n - 1.0) / (n - n_fixed - k);
    }
    let m = sets.len() as f64;
    Ok(FitStats {
        r2_overall: acc.r2_overall / m,
        r2_overall_adj: acc.r2_overall_adj / m,
        r2_within: acc.r2_within / m,
        r2_within_adj: acc.r2_within_adj / m,
    })
}

/// Significance levels reported by default.
pub const DEFAULT_ALPHAS: [f64; 3] = [0.10, 0.05, 0.01];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientInterval {
    pub variable: usize,
    pub estimate: f64,
    /// Two-sided error level; the interval has coverage `1 - alpha`.
    pub alpha: f64,
    pub lower: f64,
    pub upper: f64,
    pub z0: f64,
    pub acceleration: f64,
    /// Every bootstrap replicate equalled the estimate.
    pub degenerate: bool,
}

impl CoefficientInterval {
    pub fn significant(&self) -> bool {
        !(self.lower <= 0.0 && 0.0 <= self.upper)
    }
}

/// Type-7 quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// BCa intervals for a statistic of a unit-level sample.
///
/// `estimator` receives the list of unit indices making up a sample (with
/// repeats for bootstrap draws). Resamples draw `n_units` units with
/// replacement; the acceleration comes from the leave-one-unit-out
/// jackknife. One interval is returned per entry of `alphas`, all from the
/// same resamples.
pub fn bca_interval<F>(
    estimator: F,
    n_units: usize,
    alphas: &[f64],
    resamples: usize,
    seed: u64,
    variable: usize,
) -> Result<Vec<CoefficientInterval>>
where
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    if n_units < 2 {
        return Err(AmirlError::Input("BCa needs at least 2 units".into()));
    }
    if resamples < 2 {
        return Err(AmirlError::Config("BCa needs at least 2 resamples".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(AmirlError::Config(format!("significance level {a} outside (0, 1)")));
    }
    let all: Vec<usize> = (0..n_units).collect();
    let theta = estimator(&all)?;
    let draws = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_for(seed, Stage::Inference, &[variable as u64, r as u64]);
            let units: Vec<usize> = (0..n_units).map(|_| rng.random_range(0..n_units)).collect();
            estimator(&units)
        })
        .collect::<Result<Vec<f64>>>()?;
    if draws.iter().any(|d| !d.is_finite()) || !theta.is_finite() {
        return Err(AmirlError::Numerical("non-finite bootstrap replicate".into()));
    }
    let mut sorted = draws.clone();
    sorted.sort_by(f64::total_cmp);
    if sorted.first() == sorted.last() {
        return Ok(alphas
            .iter()
            .map(|&alpha| CoefficientInterval {
                variable,
                estimate: theta,
                alpha,
                lower: theta,
                upper: theta,
                z0: 0.0,
                acceleration: 0.0,
                degenerate: true,
            })
            .collect());
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let r = resamples as f64;
    let below = draws.iter().filter(|d| **d < theta).count() as f64;
    let equal = draws.iter().filter(|d| **d == theta).count() as f64;
    let prop = ((below + 0.5 * equal) / r).clamp(0.5 / r, 1.0 - 0.5 / r);
    let z0 = std.inverse_cdf(prop);

    let jack = (0..n_units)
        .into_par_iter()
        .map(|i| {
            let rest: Vec<usize> = (0..n_units).filter(|&u| u != i).collect();
            estimator(&rest)
        })
        .collect::<Result<Vec<f64>>>()?;
    let jbar = jack.iter().sum::<f64>() / n_units as f64;
    let (mut s2, mut s3) = (0.0, 0.0);
    for j in &jack {
        let d = jbar - j;
        s2 += d * d;
        s3 += d * d * d;
    }
    let acceleration = if s2 > 0.0 { s3 / (6.0 * s2.powf(1.5)) } else { 0.0 };

    let adjusted = |z: f64| {
        let num = z0 + z;
        let den = 1.0 - acceleration * num;
        if den <= 0.0 {
            if num > 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            std.cdf(z0 + num / den)
        }
    };
    Ok(alphas
        .iter()
        .map(|&alpha| {
            let lo_q = adjusted(std.inverse_cdf(alpha / 2.0));
            let hi_q = adjusted(std.inverse_cdf(1.0 - alpha / 2.0));
            CoefficientInterval {
                variable,
                estimate: theta,
                alpha,
                lower: quantile_sorted(&sorted, lo_q),
                upper: quantile_sorted(&sorted, hi_q),
                z0,
                acceleration,
                degenerate: false,
            }
        })
        .collect())
}
