//! Balanced-window search over an unbalanced long-format table.

use std::cmp::Ordering;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::io::LongTable;
use super::{PanelDataset, VarKind, VarRole, Variable};
use crate::error::{AmirlError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowCandidate {
    pub start_year: i64,
    pub end_year: i64,
    pub n_units: usize,
    pub panel_size: usize,
}

impl WindowCandidate {
    pub fn new(start_year: i64, end_year: i64, n_units: usize) -> Self {
        let len = (end_year - start_year + 1) as usize;
        Self {
            start_year,
            end_year,
            n_units,
            panel_size: n_units * len,
        }
    }

    pub fn length(&self) -> usize {
        (self.end_year - self.start_year + 1) as usize
    }
}

/// Rule deciding whether a unit counts as present in a given year.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Availability {
    /// At least one non-missing, non-zero value in the year.
    #[default]
    AnyNonZero,
    /// Every listed variable is non-missing and non-zero in the year.
    RequireNonZero(Vec<String>),
}

impl Availability {
    fn predicate(&self, table: &LongTable) -> Result<Box<dyn Fn(&[Option<f64>]) -> bool>> {
        match self {
            Availability::AnyNonZero => Ok(Box::new(|cells: &[Option<f64>]| {
                cells.iter().any(|c| matches!(c, Some(v) if *v != 0.0))
            })),
            Availability::RequireNonZero(names) if names.is_empty() => {
                Availability::AnyNonZero.predicate(table)
            }
            Availability::RequireNonZero(names) => {
                let idx = names
                    .iter()
                    .map(|n| {
                        table
                            .variable_index(n)
                            .ok_or_else(|| AmirlError::Config(format!("unknown variable `{n}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Box::new(move |cells: &[Option<f64>]| {
                    idx.iter()
                        .all(|&j| matches!(cells.get(j), Some(Some(v)) if *v != 0.0))
                }))
            }
        }
    }
}

/// `available[u][y]` for every unit and every year offset of the table.
fn availability_matrix(table: &LongTable, availability: &Availability) -> Result<Vec<Vec<bool>>> {
    let pred = availability.predicate(table)?;
    Ok((0..table.units.len())
        .map(|u| {
            (0..table.years.len())
                .map(|y| table.cells(u, y).map(|c| pred(c)).unwrap_or(false))
                .collect()
        })
        .collect())
}

/// Orders candidates: windows within `slack` of the largest panel size come
/// first, longest window first, then larger panel, then earlier start; the
/// remaining windows follow by panel size, length and start year.
pub fn rank_windows(mut candidates: Vec<WindowCandidate>, slack: f64) -> Vec<WindowCandidate> {
    let max_size = candidates.iter().map(|c| c.panel_size).max().unwrap_or(0);
    let cutoff = (1.0 - slack) * max_size as f64;
    let near_top = |c: &WindowCandidate| c.panel_size as f64 >= cutoff;
    candidates.sort_by(|a, b| {
        let (ta, tb) = (near_top(a), near_top(b));
        match (ta, tb) {
            (true, false) => Ordering::Less,
            (false, true) => Ordering::Greater,
            (true, true) => b
                .length()
                .cmp(&a.length())
                .then(b.panel_size.cmp(&a.panel_size))
                .then(a.start_year.cmp(&b.start_year)),
            (false, false) => b
                .panel_size
                .cmp(&a.panel_size)
                .then(b.length().cmp(&a.length()))
                .then(a.start_year.cmp(&b.start_year)),
        }
    });
    candidates
}

/// Enumerates every `[start, end]` window of at least `min_length` years and
/// counts the units available in all of its years, then ranks the windows.
pub fn select_balanced_window(
    raw: &LongTable,
    min_length: usize,
    slack: f64,
    availability: &Availability,
) -> Result<Vec<WindowCandidate>> {
    if raw.is_empty() {
        return Err(AmirlError::NoData);
    }
    if !(0.0..1.0).contains(&slack) {
        return Err(AmirlError::Config(format!("slack must lie in [0, 1), got {slack}")));
    }
    let avail = availability_matrix(raw, availability)?;
    let n_years = raw.years.len();
    let mut candidates = Vec::new();
    for s in 0..n_years {
        let mut alive: Vec<bool> = avail.iter().map(|a| a[s]).collect();
        for e in s..n_years {
            if e > s {
                for (u, ok) in alive.iter_mut().enumerate() {
                    *ok &= avail[u][e];
                }
            }
            let len = e - s + 1;
            let n_units = alive.iter().filter(|a| **a).count();
            if len >= min_length.max(1) && n_units > 0 {
                candidates.push(WindowCandidate::new(raw.years[s], raw.years[e], n_units));
            }
        }
    }
    if candidates.is_empty() {
        return Err(AmirlError::NoFeasibleWindow);
    }
    Ok(rank_windows(candidates, slack))
}

/// Pivots the units available throughout `window` into a balanced panel.
/// Kinds are inferred (binary when every observed value is 0 or 1); all
/// roles start as covariates.
pub fn extract_window(
    raw: &LongTable,
    window: &WindowCandidate,
    availability: &Availability,
) -> Result<PanelDataset> {
    let avail = availability_matrix(raw, availability)?;
    let ys = raw
        .year_offset(window.start_year)
        .ok_or_else(|| AmirlError::Input(format!("year {} not in table", window.start_year)))?;
    let ye = raw
        .year_offset(window.end_year)
        .ok_or_else(|| AmirlError::Input(format!("year {} not in table", window.end_year)))?;
    let units: Vec<usize> = (0..raw.units.len())
        .filter(|&u| (ys..=ye).all(|y| avail[u][y]))
        .collect();
    if units.is_empty() {
        return Err(AmirlError::NoFeasibleWindow);
    }
    let t = ye - ys + 1;
    let p = raw.variables.len();
    let mut values = Array2::<f64>::from_elem((units.len() * t, p), f64::NAN);
    for (i, &u) in units.iter().enumerate() {
        for k in 0..t {
            if let Some(cells) = raw.cells(u, ys + k) {
                for (j, c) in cells.iter().enumerate() {
                    if let Some(v) = c {
                        values[[i * t + k, j]] = *v;
                    }
                }
            }
        }
    }
    let variables = raw
        .variables
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col = values.column(j);
            let observed: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
            let binary = !observed.is_empty() && observed.iter().all(|v| *v == 0.0 || *v == 1.0);
            Variable {
                name: name.clone(),
                kind: if binary { VarKind::Binary } else { VarKind::Continuous },
                role: VarRole::Covariate,
            }
        })
        .collect();
    PanelDataset::balanced(
        units.iter().map(|&u| raw.units[u].clone()).collect(),
        raw.years[ys..=ye].to_vec(),
        variables,
        values,
    )
}
