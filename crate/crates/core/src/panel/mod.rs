//! Panel data model: units observed over time with a per-cell missingness
//! mask, plus window extraction, within-transformation and standardisation.

mod io;
mod transform;
mod window;

pub use io::{read_long_csv, read_wide_csv, write_long_csv, write_wide_csv, LongTable};
pub use transform::{
    recover_fixed_effects, standardize, within_transform, DemeanedPanel, Standardized,
};
pub use window::{
    extract_window, rank_windows, select_balanced_window, Availability, WindowCandidate,
};

use std::ops::Range;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{AmirlError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarRole {
    Target,
    Covariate,
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub role: VarRole,
}

/// Unit x time x variable table stored row-wise.
///
/// Rows are sorted by unit, then time; each unit's rows are contiguous.
/// Missing cells hold `NaN` in `values` and `false` in `mask`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    unit_ids: Vec<String>,
    time_points: Vec<i64>,
    variables: Vec<Variable>,
    row_unit: Vec<usize>,
    row_time: Vec<usize>,
    values: Array2<f64>,
    mask: Array2<bool>,
}

impl PanelDataset {
    /// Builds a dataset from row-wise storage. `row_unit[r]` / `row_time[r]`
    /// index into `unit_ids` / `time_points`. Cells whose value is `NaN` are
    /// taken as missing.
    pub fn new(
        unit_ids: Vec<String>,
        time_points: Vec<i64>,
        variables: Vec<Variable>,
        row_unit: Vec<usize>,
        row_time: Vec<usize>,
        values: Array2<f64>,
    ) -> Result<Self> {
        let n_rows = values.nrows();
        if row_unit.len() != n_rows || row_time.len() != n_rows {
            return Err(AmirlError::DimensionMismatch(format!(
                "{} value rows but {} unit / {} time labels",
                n_rows,
                row_unit.len(),
                row_time.len()
            )));
        }
        if values.ncols() != variables.len() {
            return Err(AmirlError::DimensionMismatch(format!(
                "{} value columns but {} variables",
                values.ncols(),
                variables.len()
            )));
        }
        if time_points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AmirlError::Input("time points must be strictly increasing".into()));
        }
        for r in 0..n_rows {
            if row_unit[r] >= unit_ids.len() || row_time[r] >= time_points.len() {
                return Err(AmirlError::Input(format!("row {r} has an out-of-range label")));
            }
            if r > 0 {
                let prev = (row_unit[r - 1], row_time[r - 1]);
                let cur = (row_unit[r], row_time[r]);
                if cur <= prev {
                    return Err(AmirlError::Input(format!(
                        "rows must be sorted by (unit, time) without duplicates; row {r} breaks this"
                    )));
                }
            }
        }
        let mask = values.mapv(|v| !v.is_nan());
        for (j, var) in variables.iter().enumerate() {
            if var.kind == VarKind::Binary {
                for r in 0..n_rows {
                    let v = values[[r, j]];
                    if mask[[r, j]] && v != 0.0 && v != 1.0 {
                        return Err(AmirlError::Input(format!(
                            "binary variable `{}` has value {v} in row {r}",
                            var.name
                        )));
                    }
                }
            }
            if values.column(j).iter().any(|v| v.is_infinite()) {
                return Err(AmirlError::Input(format!(
                    "variable `{}` has a non-finite value",
                    var.name
                )));
            }
        }
        Ok(Self {
            unit_ids,
            time_points,
            variables,
            row_unit,
            row_time,
            values,
            mask,
        })
    }

    /// Convenience constructor for a balanced panel whose rows are ordered
    /// unit-major, time-minor.
    pub fn balanced(
        unit_ids: Vec<String>,
        time_points: Vec<i64>,
        variables: Vec<Variable>,
        values: Array2<f64>,
    ) -> Result<Self> {
        let n = unit_ids.len();
        let t = time_points.len();
        if values.nrows() != n * t {
            return Err(AmirlError::DimensionMismatch(format!(
                "balanced panel needs {} rows, got {}",
                n * t,
                values.nrows()
            )));
        }
        let row_unit = (0..n * t).map(|r| r / t).collect();
        let row_time = (0..n * t).map(|r| r % t).collect();
        Self::new(unit_ids, time_points, variables, row_unit, row_time, values)
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }
    pub fn time_points(&self) -> &[i64] {
        &self.time_points
    }
    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }
    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }
    pub fn mask(&self) -> ArrayView2<'_, bool> {
        self.mask.view()
    }
    pub fn row_unit(&self) -> &[usize] {
        &self.row_unit
    }
    pub fn row_time(&self) -> &[usize] {
        &self.row_time
    }
    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }
    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }
    pub fn n_periods(&self) -> usize {
        self.time_points.len()
    }
    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }
    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.values.column(j)
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn target_index(&self) -> Option<usize> {
        self.variables.iter().position(|v| v.role == VarRole::Target)
    }

    /// Indices of variables with the covariate role, in column order.
    pub fn covariate_indices(&self) -> Vec<usize> {
        self.variables
            .iter()
            .enumerate()
            .filter(|(_, v)| v.role == VarRole::Covariate)
            .map(|(j, _)| j)
            .collect()
    }

    /// Contiguous row ranges, one per unit that has at least one row.
    pub fn unit_blocks(&self) -> Vec<Range<usize>> {
        let mut blocks = Vec::new();
        let mut start = 0;
        for r in 1..=self.n_rows() {
            if r == self.n_rows() || self.row_unit[r] != self.row_unit[start] {
                blocks.push(start..r);
                start = r;
            }
        }
        if self.n_rows() == 0 {
            blocks.clear();
        }
        blocks
    }

    /// Every unit observed at every time point exactly once.
    pub fn is_balanced(&self) -> bool {
        self.n_rows() == self.n_units() * self.n_periods()
            && self
                .row_unit
                .iter()
                .zip(&self.row_time)
                .enumerate()
                .all(|(r, (&u, &t))| u == r / self.n_periods() && t == r % self.n_periods())
    }

    pub fn ensure_balanced(&self) -> Result<()> {
        if self.is_balanced() {
            Ok(())
        } else {
            Err(AmirlError::Unbalanced(format!(
                "{} rows for {} units x {} periods",
                self.n_rows(),
                self.n_units(),
                self.n_periods()
            )))
        }
    }

    pub fn n_missing(&self) -> usize {
        self.mask.iter().filter(|m| !**m).count()
    }

    pub fn set_role(&mut self, name: &str, role: VarRole) -> Result<()> {
        let j = self
            .var_index(name)
            .ok_or_else(|| AmirlError::Config(format!("unknown variable `{name}`")))?;
        self.variables[j].role = role;
        Ok(())
    }

    pub fn set_kind(&mut self, name: &str, kind: VarKind) -> Result<()> {
        let j = self
            .var_index(name)
            .ok_or_else(|| AmirlError::Config(format!("unknown variable `{name}`")))?;
        if kind == VarKind::Binary {
            let bad = self
                .values
                .column(j)
                .iter()
                .any(|v| !v.is_nan() && *v != 0.0 && *v != 1.0);
            if bad {
                return Err(AmirlError::Config(format!(
                    "variable `{name}` is not binary"
                )));
            }
        }
        self.variables[j].kind = kind;
        Ok(())
    }

    /// Copy of this dataset with `values` replaced by a completed matrix.
    /// Observed cells must agree; the original mask is kept.
    pub fn with_completed(&self, completed: Array2<f64>) -> Result<CompletedPanel> {
        if completed.dim() != self.values.dim() {
            return Err(AmirlError::DimensionMismatch(
                "completed matrix shape differs from source".into(),
            ));
        }
        if completed.iter().any(|v| !v.is_finite()) {
            return Err(AmirlError::Numerical("completed matrix has non-finite cells".into()));
        }
        Ok(CompletedPanel {
            source: self.clone(),
            values: completed,
        })
    }
}

/// A dataset with every cell filled, still carrying the source mask.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletedPanel {
    pub source: PanelDataset,
    pub values: Array2<f64>,
}

/// Column-name-addressed target/covariate design extracted from a complete
/// panel, with unit blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub y: ndarray::Array1<f64>,
    pub x: Array2<f64>,
    pub blocks: Vec<Range<usize>>,
    pub covariate_names: Vec<String>,
}

impl Design {
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }
    pub fn n_units(&self) -> usize {
        self.blocks.len()
    }
    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }
}

#[cfg(test)]
pub(crate) fn toy_panel(n: usize, t: usize, cols: &[(&str, VarKind, VarRole)], values: Array2<f64>) -> PanelDataset {
    PanelDataset::balanced(
        (0..n).map(|i| format!("u{i}")).collect(),
        (0..t as i64).map(|k| 2000 + k).collect(),
        cols.iter()
            .map(|(name, kind, role)| Variable {
                name: name.to_string(),
                kind: *kind,
                role: *role,
            })
            .collect(),
        values,
    )
    .unwrap()
}
