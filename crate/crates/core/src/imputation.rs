//! Multiple imputation by chained equations with tree learners.
//!
//! Continuous variables are imputed with RE-EM trees (unit as the random
//! intercept), binary variables with classification trees writing the hard
//! class. Each of the `m` completed data sets runs its own chain on its own
//! random stream.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AmirlError, Result};
use crate::panel::{PanelDataset, VarKind};
use crate::seed::{derive_seed, rng_for, Stage};
use crate::trees::{
    fit_classification_tree, fit_regression_tree, fit_reem, predict_hard_class, ReemControls,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImputationConfig {
    pub m: usize,
    pub cycles: usize,
    pub seed: u64,
    /// Tree, mixed-model and alternation controls for continuous variables;
    /// binary variables use the same tree controls.
    pub reem: ReemControls,
    /// Clip continuous predictions to [0, 1] for variables observed only
    /// inside that range.
    pub clip_bounded: bool,
    /// Use RE-EM trees for continuous variables; plain regression trees
    /// otherwise.
    pub use_random_effects: bool,
}

impl Default for ImputationConfig {
    fn default() -> Self {
        Self {
            m: 10,
            cycles: 20,
            seed: 0,
            reem: ReemControls::default(),
            clip_bounded: true,
            use_random_effects: true,
        }
    }
}

impl ImputationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.cycles == 0 {
            return Err(AmirlError::Config(format!(
                "imputation needs M >= 1 and C >= 1, got M={}, C={}",
                self.m, self.cycles
            )));
        }
        Ok(())
    }
}

/// One completed copy of the source panel.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedDataset {
    pub m: usize,
    /// Seed of the stream this copy drew from.
    pub stream_seed: u64,
    pub cycles: usize,
    pub values: Array2<f64>,
    /// Source mask (true = observed).
    pub mask: Array2<bool>,
}

/// Fills each missing cell with its column's observed mean; binary columns
/// get the mean rounded at 0.5 (ties to 0).
pub fn placeholder_impute(data: &PanelDataset) -> Result<Array2<f64>> {
    let mut out = data.values().to_owned();
    let mask = data.mask();
    for (j, var) in data.variables().iter().enumerate() {
        let observed: Vec<f64> = (0..data.n_rows())
            .filter(|&r| mask[[r, j]])
            .map(|r| out[[r, j]])
            .collect();
        if observed.len() == data.n_rows() {
            continue;
        }
        if observed.is_empty() {
            return Err(AmirlError::FullyMissing(var.name.clone()));
        }
        let mean = observed.iter().sum::<f64>() / observed.len() as f64;
        let fill = match var.kind {
            VarKind::Binary => {
                if mean > 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
            VarKind::Continuous => mean,
        };
        for r in 0..data.n_rows() {
            if !mask[[r, j]] {
                out[[r, j]] = fill;
            }
        }
    }
    Ok(out)
}

fn without_column(values: ArrayView2<f64>, rows: &[usize], skip: usize) -> Array2<f64> {
    let p = values.ncols();
    Array2::from_shape_fn((rows.len(), p - 1), |(i, k)| {
        let col = if k < skip { k } else { k + 1 };
        values[[rows[i], col]]
    })
}

fn impute_one(data: &PanelDataset, config: &ImputationConfig, m: usize) -> Result<ImputedDataset> {
    let mut values = placeholder_impute(data)?;
    let mask = data.mask().to_owned();
    let n = data.n_rows();
    let p = data.n_vars();
    let incomplete: Vec<usize> = (0..p).filter(|&j| mask.column(j).iter().any(|o| !o)).collect();
    let bounded: Vec<bool> = (0..p)
        .map(|j| {
            (0..n)
                .filter(|&r| mask[[r, j]])
                .all(|r| (0.0..=1.0).contains(&values[[r, j]]))
        })
        .collect();
    let mut rng = rng_for(config.seed, Stage::Imputation, &[m as u64]);
    let units = data.row_unit();

    for cycle in 0..config.cycles {
        let mut order = incomplete.clone();
        order.shuffle(&mut rng);
        for &j in &order {
            let var = &data.variables()[j];
            let annotate = |e: AmirlError| AmirlError::Imputation {
                m,
                cycle,
                variable: var.name.clone(),
                source: Box::new(e),
            };
            let obs: Vec<usize> = (0..n).filter(|&r| mask[[r, j]]).collect();
            let mis: Vec<usize> = (0..n).filter(|&r| !mask[[r, j]]).collect();
            if p < 2 {
                // nothing to condition on; the placeholder stays
                continue;
            }
            let x_obs = without_column(values.view(), &obs, j);
            let y_obs = ndarray::Array1::from_iter(obs.iter().map(|&r| values[[r, j]]));
            let x_mis = without_column(values.view(), &mis, j);
            let predictions: Vec<f64> = match var.kind {
                VarKind::Binary => {
                    let tree = fit_classification_tree(x_obs.view(), y_obs.view(), config.reem.tree)
                        .map_err(annotate)?;
                    x_mis.outer_iter().map(|row| predict_hard_class(&tree, row)).collect()
                }
                VarKind::Continuous if config.use_random_effects => {
                    let obs_units: Vec<usize> = obs.iter().map(|&r| units[r]).collect();
                    let model = fit_reem(x_obs.view(), y_obs.view(), &obs_units, data.n_units(), config.reem)
                        .map_err(annotate)?;
                    mis.iter()
                        .zip(x_mis.outer_iter())
                        .map(|(&r, row)| model.predict(row, Some(units[r])))
                        .collect()
                }
                VarKind::Continuous => {
                    let tree = fit_regression_tree(x_obs.view(), y_obs.view(), config.reem.tree)
                        .map_err(annotate)?;
                    x_mis.outer_iter().map(|row| tree.predict(row)).collect()
                }
            };
            let clip = config.clip_bounded && var.kind == VarKind::Continuous && bounded[j];
            for (&r, &v) in mis.iter().zip(&predictions) {
                if !v.is_finite() {
                    return Err(annotate(AmirlError::Numerical("non-finite imputation".into())));
                }
                values[[r, j]] = if clip { v.clamp(0.0, 1.0) } else { v };
            }
        }
    }
    Ok(ImputedDataset {
        m,
        stream_seed: derive_seed(config.seed, Stage::Imputation, &[m as u64]),
        cycles: config.cycles,
        values,
        mask,
    })
}

/// Runs `config.m` independent chains, in parallel on the current rayon
/// pool; results come back in `m` order.
pub fn run_mice(data: &PanelDataset, config: &ImputationConfig) -> Result<Vec<ImputedDataset>> {
    config.validate()?;
    (0..config.m)
        .into_par_iter()
        .map(|m| impute_one(data, config, m))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationScale {
    /// Values as stored.
    Raw,
    /// Standardised and time-demeaned (unit means over observed cells for the
    /// pairwise-complete side).
    Within,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub scale: CorrelationScale,
    pub var_a: String,
    pub var_b: String,
    pub complete_cases: usize,
    /// `None` when fewer than 3 complete cases.
    pub pairwise_r: Option<f64>,
    pub mean_imputed_r: f64,
    /// `None` with fewer than 2 imputed sets.
    pub sd_imputed_r: Option<f64>,
}

fn pearson(pairs: impl Iterator<Item = (f64, f64)>) -> Option<f64> {
    let v: Vec<(f64, f64)> = pairs.collect();
    let n = v.len() as f64;
    if v.len() < 3 {
        return None;
    }
    let ma = v.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = v.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in &v {
        sab += (a - ma) * (b - mb);
        saa += (a - ma) * (a - ma);
        sbb += (b - mb) * (b - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Subtracts each unit's mean over the cells flagged in `keep`.
fn demean_observed(values: ArrayView2<f64>, keep: ArrayView2<bool>, blocks: &[std::ops::Range<usize>]) -> Array2<f64> {
    let mut out = values.to_owned();
    for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        for b in blocks {
            let obs: Vec<usize> = b.clone().filter(|&r| keep[[r, j]]).collect();
            if obs.is_empty() {
                continue;
            }
            let mean = obs.iter().map(|&r| values[[r, j]]).sum::<f64>() / obs.len() as f64;
            for r in b.clone() {
                col[r] -= mean;
            }
        }
    }
    out
}

/// Compares pairwise-complete correlations in the source with correlations
/// in each imputed copy, on the raw scale and after demeaning.
pub fn correlation_diagnostics(source: &PanelDataset, imputed: &[ImputedDataset]) -> Vec<CorrelationRow> {
    let p = source.n_vars();
    let mask = source.mask();
    let blocks = source.unit_blocks();
    let all_true = Array2::from_elem(mask.dim(), true);
    let mut rows = Vec::new();
    for scale in [CorrelationScale::Raw, CorrelationScale::Within] {
        let (src, imps): (Array2<f64>, Vec<Array2<f64>>) = match scale {
            CorrelationScale::Raw => (
                source.values().to_owned(),
                imputed.iter().map(|d| d.values.clone()).collect(),
            ),
            CorrelationScale::Within => (
                demean_observed(source.values(), mask, &blocks),
                imputed
                    .iter()
                    .map(|d| demean_observed(d.values.view(), all_true.view(), &blocks))
                    .collect(),
            ),
        };
        for a in 0..p {
            for b in (a + 1)..p {
                let complete: Vec<usize> = (0..source.n_rows())
                    .filter(|&r| mask[[r, a]] && mask[[r, b]])
                    .collect();
                let pairwise_r = pearson(complete.iter().map(|&r| (src[[r, a]], src[[r, b]])));
                let rs: Vec<f64> = imps
                    .iter()
                    .map(|v| pearson((0..v.nrows()).map(|r| (v[[r, a]], v[[r, b]]))).unwrap_or(f64::NAN))
                    .collect();
                let k = rs.len() as f64;
                let mean = rs.iter().sum::<f64>() / k;
                let sd = (rs.len() >= 2)
                    .then(|| (rs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt());
                rows.push(CorrelationRow {
                    scale,
                    var_a: source.variables()[a].name.clone(),
                    var_b: source.variables()[b].name.clone(),
                    complete_cases: complete.len(),
                    pairwise_r,
                    mean_imputed_r: mean,
                    sd_imputed_r: sd,
                });
            }
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{toy_panel, VarRole};
    use ndarray::array;

    const C: VarKind = VarKind::Continuous;
    const B: VarKind = VarKind::Binary;
    const COV: VarRole = VarRole::Covariate;

    #[test]
    fn placeholder_means() {
        let nan = f64::NAN;
        let p = toy_panel(
            2,
            2,
            &[("x", C, COV), ("d", B, COV)],
            array![[2.0, 1.0], [4.0, 1.0], [nan, 0.0], [5.0, nan]],
        );
        let out = placeholder_impute(&p).unwrap();
        assert!((out[[2, 0]] - 11.0 / 3.0).abs() < 1e-15);
        assert_eq!(out[[3, 1]], 1.0);
    }

    #[test]
    fn placeholder_binary_tie_goes_to_zero() {
        let nan = f64::NAN;
        let p = toy_panel(2, 2, &[("d", B, COV)], array![[1.0], [0.0], [nan], [nan]]);
        let out = placeholder_impute(&p).unwrap();
        assert_eq!(out[[2, 0]], 0.0);
    }

    #[test]
    fn fully_missing_column_is_named() {
        let nan = f64::NAN;
        let p = toy_panel(1, 2, &[("x", C, COV), ("gone", C, COV)], array![[1.0, nan], [2.0, nan]]);
        let err = placeholder_impute(&p).unwrap_err();
        assert!(err.to_string().contains("gone"));
    }

    #[test]
    fn complete_data_is_copied() {
        let p = toy_panel(2, 2, &[("x", C, COV), ("z", C, COV)], array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 9.0]]);
        let cfg = ImputationConfig { m: 3, cycles: 2, ..Default::default() };
        let out = run_mice(&p, &cfg).unwrap();
        assert_eq!(out.len(), 3);
        for d in &out {
            assert_eq!(d.values, p.values().to_owned());
        }
    }

    #[test]
    fn fully_observed_pair_matches() {
        let p = toy_panel(
            2,
            3,
            &[("x", C, COV), ("z", C, COV)],
            array![[1.0, 2.0], [3.0, 1.0], [5.0, 6.0], [7.0, 9.0], [2.0, 2.5], [0.0, 1.0]],
        );
        let cfg = ImputationConfig { m: 2, cycles: 1, ..Default::default() };
        let out = run_mice(&p, &cfg).unwrap();
        let rows = correlation_diagnostics(&p, &out);
        assert_eq!(rows.len(), 2);
        for r in rows {
            assert_eq!(r.pairwise_r.unwrap(), r.mean_imputed_r);
            assert_eq!(r.sd_imputed_r, Some(0.0));
        }
    }
}
