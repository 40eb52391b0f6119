//! RE-EM trees: a regression tree for the fixed part combined with a random
//! unit intercept, alternating between the two until the restricted
//! log-likelihood settles.

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::cart::{fit_regression_tree, DecisionTree, TreeControls};
use super::lmm::{fit_lmm_on_leaves, LmmControls, LmmFit};
use crate::error::{AmirlError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReemControls {
    pub tree: TreeControls,
    pub lmm: LmmControls,
    /// Stop once the log-likelihood changes by less than this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ReemControls {
    fn default() -> Self {
        Self {
            tree: TreeControls::default(),
            lmm: LmmControls::default(),
            tol: 1e-4,
            max_iter: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReemModel {
    /// Leaf values hold the mixed-model leaf means.
    pub tree: DecisionTree,
    pub lmm: LmmFit,
    /// Units that contributed rows to the fit.
    pub seen: Vec<bool>,
    pub iterations: usize,
    pub converged: bool,
    pub loglik_trace: Vec<f64>,
}

impl ReemModel {
    /// Tree part plus the unit's predicted intercept; units not seen in
    /// training get the tree part only.
    pub fn predict(&self, row: ArrayView1<f64>, unit: Option<usize>) -> f64 {
        let fixed = self.tree.predict(row);
        match unit {
            Some(i) if self.seen.get(i).copied().unwrap_or(false) => fixed + self.lmm.unit_effects[i],
            _ => fixed,
        }
    }
}

/// Fits a RE-EM tree. `unit[r] < n_units` identifies the unit of row `r`.
pub fn fit_reem(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    unit: &[usize],
    n_units: usize,
    controls: ReemControls,
) -> Result<ReemModel> {
    let n = y.len();
    if x.nrows() != n || unit.len() != n {
        return Err(AmirlError::DimensionMismatch(
            "covariate, response and unit lengths differ".into(),
        ));
    }
    if let Some(r) = (0..n).find(|&r| !y[r].is_finite() || x.row(r).iter().any(|v| !v.is_finite())) {
        return Err(AmirlError::Input(format!("row {r} has non-finite values")));
    }
    if unit.iter().any(|&u| u >= n_units) {
        return Err(AmirlError::Input("unit index out of range".into()));
    }
    let ys: Vec<f64> = y.to_vec();
    let mut effects = vec![0.0; n_units];
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut last: Option<(DecisionTree, LmmFit)> = None;
    let mut best: Option<(DecisionTree, LmmFit)> = None;
    for _ in 0..controls.max_iter.max(1) {
        let adjusted = ndarray::Array1::from_shape_fn(n, |r| ys[r] - effects[unit[r]]);
        let tree = fit_regression_tree(x, adjusted.view(), controls.tree)?;
        let leaf: Vec<usize> = (0..n).map(|r| tree.leaf_of(x.row(r))).collect();
        let lmm = fit_lmm_on_leaves(&leaf, &ys, unit, tree.n_leaves(), n_units, controls.lmm)?;
        effects.clone_from(&lmm.unit_effects);
        let ll = lmm.restricted_loglik;
        let settled = trace
            .last()
            .is_some_and(|&prev| prev == ll || (ll - prev).abs() < controls.tol);
        // The alternation is deterministic, so an exact repeat of an earlier
        // likelihood means it has entered a cycle and will not settle.
        let cycling = !settled && trace.iter().any(|&prev| prev == ll);
        trace.push(ll);
        if best.as_ref().is_none_or(|(_, b)| ll > b.restricted_loglik) {
            best = Some((tree.clone(), lmm.clone()));
        }
        last = Some((tree, lmm));
        if settled {
            converged = true;
            break;
        }
        if cycling {
            break;
        }
    }
    // Without convergence the best iterate seen is kept.
    let chosen = if converged { last } else { best };
    let (mut tree, lmm) = chosen.expect("at least one iteration runs");
    tree.set_leaf_values(&lmm.leaf_means)?;
    let mut seen = vec![false; n_units];
    for &u in unit {
        seen[u] = true;
    }
    Ok(ReemModel {
        tree,
        lmm,
        seen,
        iterations: trace.len(),
        converged,
        loglik_trace: trace,
    })
}
