//! Building blocks of Steps 2 to 4: resampling, importance, candidate
//! sampling, thresholding and the final mask.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AmirlError, Result};
use crate::lasso::DEGENERATE_RSS;
use crate::linalg::rss;

use super::prepare::PreparedSet;

/// Draws `n_units` unit indices with replacement.
pub fn block_bootstrap<R: Rng>(n_units: usize, rng: &mut R) -> Vec<usize> {
    (0..n_units).map(|_| rng.random_range(0..n_units)).collect()
}

/// Rows of the drawn units, each unit's block copied whole and in order.
pub fn resample_rows(blocks: &[Range<usize>], units: &[usize]) -> Vec<usize> {
    units.iter().flat_map(|&u| blocks[u].clone()).collect()
}

/// `I_j = |mean over samples of the refit coefficient j|`, together with the
/// per-sample estimates it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    pub values: Vec<f64>,
    /// One length-p vector per (m, b), in lexicographic order.
    pub estimates: Vec<Vec<f64>>,
}

pub fn compute_importance(estimates: Vec<Vec<f64>>) -> Result<ImportanceVector> {
    let Some(first) = estimates.first() else {
        return Err(AmirlError::NoData);
    };
    let p = first.len();
    if estimates.iter().any(|e| e.len() != p) {
        return Err(AmirlError::DimensionMismatch("importance estimates differ in length".into()));
    }
    let s = estimates.len() as f64;
    let values = (0..p)
        .map(|j| (estimates.iter().map(|e| e[j]).sum::<f64>() / s).abs())
        .collect();
    Ok(ImportanceVector { values, estimates })
}

/// Draws `count` distinct indices, each draw proportional to the remaining
/// weights; once the positive weights are used up the rest is uniform.
/// Returned in ascending order.
pub fn sample_candidates<R: Rng>(weights: &[f64], count: usize, rng: &mut R) -> Result<Vec<usize>> {
    let p = weights.len();
    if count > p {
        return Err(AmirlError::Config(format!("cannot draw {count} of {p} candidates")));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(AmirlError::Numerical("candidate weights must be finite and non-negative".into()));
    }
    let mut remaining: Vec<usize> = (0..p).collect();
    let mut picked = Vec::with_capacity(count);
    for _ in 0..count {
        let total: f64 = remaining.iter().map(|&j| weights[j]).sum();
        let pos = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (k, &j) in remaining.iter().enumerate() {
                if weights[j] > 0.0 {
                    acc += weights[j];
                    chosen = Some(k);
                    if u < acc {
                        break;
                    }
                }
            }
            chosen.expect("some weight is positive")
        } else {
            rng.random_range(0..remaining.len())
        };
        picked.push(remaining.remove(pos));
    }
    picked.sort_unstable();
    Ok(picked)
}

/// `floor(p * fraction)`, at least 1 and at most `p`.
pub fn candidate_count(p: usize, fraction: f64) -> usize {
    ((p as f64 * fraction + 1e-9).floor() as usize).clamp(1, p.max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub pi_star: f64,
    pub stable_set: Vec<usize>,
    /// `(pi, M-average BIC)` per candidate threshold, largest pi first.
    pub bic_table: Vec<(f64, f64)>,
    /// The initial estimates were all zero, so the stable set was left empty.
    pub empty_initial: bool,
}

/// BIC of `beta` on one prepared set: `n log(RSS/n) + log(n)(N+K)`, or
/// `-inf` for a perfect fit.
pub(crate) fn threshold_bic(set: &PreparedSet, beta: &[f64], rows: Option<&[usize]>) -> f64 {
    let (y, x) = match rows {
        Some(r) => (
            set.y.select(ndarray::Axis(0), r),
            set.x.select(ndarray::Axis(0), r),
        ),
        None => (set.y.clone(), set.x.clone()),
    };
    let n = y.len() as f64;
    let r = rss(x.view(), y.view(), beta);
    if r <= DEGENERATE_RSS * y.dot(&y) {
        return f64::NEG_INFINITY;
    }
    let k = beta.iter().filter(|b| **b != 0.0).count();
    n * (r / n).ln() + n.ln() * (set.n_fixed + k) as f64
}

/// Picks the threshold among the distinct selection probabilities that
/// minimises the BIC of the thresholded initial estimates, averaged over the
/// prepared sets. Ties go to the larger threshold.
///
/// With `observed_target_only`, rows whose target was imputed are left out
/// of the BIC.
pub fn select_threshold(
    pi_hat: &[f64],
    b_init: &[f64],
    sets: &[PreparedSet],
    observed_target_only: bool,
) -> Result<ThresholdChoice> {
    if pi_hat.len() != b_init.len() {
        return Err(AmirlError::DimensionMismatch("pi_hat and b_init differ in length".into()));
    }
    if sets.is_empty() {
        return Err(AmirlError::NoData);
    }
    let mut thresholds: Vec<f64> = pi_hat.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let max_pi = thresholds.first().copied().unwrap_or(0.0);
    if b_init.iter().all(|b| *b == 0.0) {
        return Ok(ThresholdChoice {
            pi_star: max_pi,
            stable_set: Vec::new(),
            bic_table: Vec::new(),
            empty_initial: true,
        });
    }
    let rows: Vec<Option<Vec<usize>>> = sets
        .iter()
        .map(|s| {
            observed_target_only.then(|| {
                (0..s.y.len()).filter(|&r| s.target_observed[r]).collect()
            })
        })
        .collect();
    let mut table = Vec::with_capacity(thresholds.len());
    for &pi in &thresholds {
        let beta: Vec<f64> = b_init
            .iter()
            .zip(pi_hat)
            .map(|(&b, &p)| if p >= pi { b } else { 0.0 })
            .collect();
        let total: f64 = sets
            .iter()
            .zip(&rows)
            .map(|(s, r)| threshold_bic(s, &beta, r.as_deref()))
            .sum();
        table.push((pi, total / sets.len() as f64));
    }
    let mut best = 0;
    for i in 1..table.len() {
        if table[i].1 < table[best].1 {
            best = i;
        }
    }
    let pi_star = table[best].0;
    Ok(ThresholdChoice {
        pi_star,
        stable_set: (0..pi_hat.len()).filter(|&j| pi_hat[j] >= pi_star).collect(),
        bic_table: table,
        empty_initial: false,
    })
}

/// Initial estimates restricted to the stable set.
pub fn amirl_estimates(b_init: &[f64], stable_set: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; b_init.len()];
    for &j in stable_set {
        out[j] = b_init[j];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn importance_uses_absolute_mean() {
        let imp = compute_importance(vec![vec![1.0, 0.5], vec![-1.0, 0.5]]).unwrap();
        assert_eq!(imp.values, vec![0.0, 0.5]);
    }

    #[test]
    fn degenerate_weights_pick_the_only_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert_eq!(sample_candidates(&[1.0, 0.0, 0.0, 0.0], 1, &mut rng).unwrap(), vec![0]);
        }
    }

    #[test]
    fn zero_weights_fall_back_to_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_candidates(&[0.0; 5], 3, &mut rng).unwrap();
        assert_eq!(s.len(), 3);
        // one positive weight: it is drawn first, the rest uniformly
        let s = sample_candidates(&[0.0, 2.0, 0.0], 2, &mut rng).unwrap();
        assert!(s.contains(&1));
        assert!(sample_candidates(&[1.0], 2, &mut rng).is_err());
    }

    #[test]
    fn candidate_counts() {
        assert_eq!(candidate_count(40, 1.0 / 3.0), 13);
        assert_eq!(candidate_count(9, 1.0 / 3.0), 3);
        assert_eq!(candidate_count(2, 1.0 / 3.0), 1);
        assert_eq!(candidate_count(10, 1.0), 10);
    }

    #[test]
    fn bootstrap_blocks_are_whole() {
        let blocks = vec![0..3, 3..6, 6..9];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let units = block_bootstrap(3, &mut rng);
        let rows = resample_rows(&blocks, &units);
        assert_eq!(rows.len(), 9);
        for (k, u) in units.iter().enumerate() {
            assert_eq!(&rows[3 * k..3 * k + 3], &[3 * u, 3 * u + 1, 3 * u + 2]);
        }
    }

    #[test]
    fn final_mask() {
        assert_eq!(amirl_estimates(&[1.0, 2.0, 3.0], &[]), vec![0.0; 3]);
        assert_eq!(amirl_estimates(&[1.0, 2.0, 3.0], &[0, 1, 2]), vec![1.0, 2.0, 3.0]);
        assert_eq!(amirl_estimates(&[1.0, 2.0, 3.0], &[1]), vec![0.0, 2.0, 0.0]);
    }
}
