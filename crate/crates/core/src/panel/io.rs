//! CSV ingestion and emission.
//!
//! Long format: header `unit,year,variable,value`, empty value = missing.
//! Wide format: header `unit,year,<var>...`, one row per (unit, year).

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2};

use super::{PanelDataset, VarKind, VarRole, Variable};
use crate::error::{AmirlError, Result};

/// Unbalanced long-format table keyed by (unit, year).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LongTable {
    /// Units in order of first appearance.
    pub units: Vec<String>,
    /// Contiguous year range covering every record.
    pub years: Vec<i64>,
    /// Variables in order of first appearance.
    pub variables: Vec<String>,
    cells: BTreeMap<(usize, usize), Vec<Option<f64>>>,
}

impl LongTable {
    pub fn from_records<I>(records: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, i64, String, Option<f64>)>,
    {
        let mut units = Vec::new();
        let mut unit_idx: HashMap<String, usize> = HashMap::new();
        let mut variables = Vec::new();
        let mut var_idx: HashMap<String, usize> = HashMap::new();
        let mut raw: Vec<(usize, i64, usize, Option<f64>)> = Vec::new();
        for (unit, year, var, value) in records {
            let u = *unit_idx.entry(unit.clone()).or_insert_with(|| {
                units.push(unit);
                units.len() - 1
            });
            let v = *var_idx.entry(var.clone()).or_insert_with(|| {
                variables.push(var);
                variables.len() - 1
            });
            if let Some(x) = value {
                if !x.is_finite() {
                    return Err(AmirlError::Input(format!("non-finite value {x}")));
                }
            }
            raw.push((u, year, v, value));
        }
        let (Some(lo), Some(hi)) = (
            raw.iter().map(|r| r.1).min(),
            raw.iter().map(|r| r.1).max(),
        ) else {
            return Ok(Self::default());
        };
        let years: Vec<i64> = (lo..=hi).collect();
        let p = variables.len();
        let mut cells: BTreeMap<(usize, usize), Vec<Option<f64>>> = BTreeMap::new();
        for (u, year, v, value) in raw {
            let entry = cells
                .entry((u, (year - lo) as usize))
                .or_insert_with(|| vec![None; p]);
            if entry[v].is_some() && value.is_some() {
                return Err(AmirlError::Input(format!(
                    "duplicate record for unit `{}`, year {year}, variable `{}`",
                    units[u], variables[v]
                )));
            }
            if value.is_some() {
                entry[v] = value;
            }
        }
        Ok(Self {
            units,
            years,
            variables,
            cells,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    pub fn year_offset(&self, year: i64) -> Option<usize> {
        let first = *self.years.first()?;
        let off = year - first;
        (off >= 0 && (off as usize) < self.years.len()).then_some(off as usize)
    }

    /// Values of every variable for a unit in a year, if the unit has any
    /// record in that year.
    pub fn cells(&self, unit: usize, year_offset: usize) -> Option<&[Option<f64>]> {
        self.cells.get(&(unit, year_offset)).map(|v| v.as_slice())
    }
}

fn parse_value(field: &str, line: usize) -> Result<Option<f64>> {
    let f = field.trim();
    if f.is_empty() || f.eq_ignore_ascii_case("na") || f.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    f.parse::<f64>()
        .map(Some)
        .map_err(|_| AmirlError::Input(format!("line {line}: cannot parse `{f}` as a number")))
}

fn parse_year(field: &str, line: usize) -> Result<i64> {
    field
        .trim()
        .parse::<i64>()
        .map_err(|_| AmirlError::Input(format!("line {line}: cannot parse year `{field}`")))
}

pub fn read_long_csv<R: Read>(reader: R) -> Result<LongTable> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["unit", "year", "variable", "value"];
    if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h.trim() != e) {
        if headers.is_empty() || headers.iter().all(|h| h.trim().is_empty()) {
            return Err(AmirlError::NoData);
        }
        return Err(AmirlError::Input(format!(
            "long format needs header `unit,year,variable,value`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        records.push((
            rec[0].trim().to_string(),
            parse_year(&rec[1], line)?,
            rec[2].trim().to_string(),
            parse_value(&rec[3], line)?,
        ));
    }
    LongTable::from_records(records)
}

pub fn write_long_csv<W: Write>(writer: W, table: &LongTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["unit", "year", "variable", "value"])?;
    for (&(u, y), cells) in &table.cells {
        for (j, c) in cells.iter().enumerate() {
            let value = c.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([
                table.units[u].as_str(),
                &table.years[y].to_string(),
                table.variables[j].as_str(),
                &value,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a wide CSV. Units keep their order of first appearance, rows are
/// sorted by year within unit. Kinds are inferred (binary when every observed
/// value is 0 or 1), roles start as covariates.
pub fn read_wide_csv<R: Read>(reader: R) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || headers.iter().all(|h| h.trim().is_empty()) {
        return Err(AmirlError::NoData);
    }
    if headers.len() < 3 || headers[0].trim() != "unit" || headers[1].trim() != "year" {
        return Err(AmirlError::Input(
            "wide format needs header `unit,year,<variables...>`".into(),
        ));
    }
    let names: Vec<String> = headers.iter().skip(2).map(|h| h.trim().to_string()).collect();
    let mut units = Vec::new();
    let mut unit_idx: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<(usize, i64, Vec<f64>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let unit = rec[0].trim().to_string();
        let u = *unit_idx.entry(unit.clone()).or_insert_with(|| {
            units.push(unit);
            units.len() - 1
        });
        let year = parse_year(&rec[1], line)?;
        let vals = (2..rec.len())
            .map(|k| parse_value(&rec[k], line).map(|v| v.unwrap_or(f64::NAN)))
            .collect::<Result<Vec<_>>>()?;
        rows.push((u, year, vals));
    }
    if rows.is_empty() {
        return Err(AmirlError::NoData);
    }
    rows.sort_by_key(|r| (r.0, r.1));
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0 && w[0].1 == w[1].1) {
        return Err(AmirlError::Input(format!(
            "duplicate row for unit `{}`, year {}",
            units[w[0].0], w[0].1
        )));
    }
    let mut years: Vec<i64> = rows.iter().map(|r| r.1).collect();
    years.sort_unstable();
    years.dedup();
    let p = names.len();
    let mut values = Array2::<f64>::zeros((rows.len(), p));
    let mut row_unit = Vec::with_capacity(rows.len());
    let mut row_time = Vec::with_capacity(rows.len());
    for (r, (u, y, vals)) in rows.iter().enumerate() {
        row_unit.push(*u);
        row_time.push(years.binary_search(y).expect("year collected above"));
        for (j, v) in vals.iter().enumerate() {
            values[[r, j]] = *v;
        }
    }
    let variables = names
        .into_iter()
        .enumerate()
        .map(|(j, name)| {
            let observed: Vec<f64> = values.column(j).iter().copied().filter(|v| !v.is_nan()).collect();
            let binary = !observed.is_empty() && observed.iter().all(|v| *v == 0.0 || *v == 1.0);
            Variable {
                name,
                kind: if binary { VarKind::Binary } else { VarKind::Continuous },
                role: VarRole::Covariate,
            }
        })
        .collect();
    PanelDataset::new(units, years, variables, row_unit, row_time, values)
}

/// Writes `values` (defaults to the dataset's own values) in wide format.
/// Missing cells (`NaN`) are written as empty fields. An optional leading
/// column such as `m` can tag every row.
pub fn write_wide_csv<W: Write>(
    writer: W,
    panel: &PanelDataset,
    values: Option<ArrayView2<f64>>,
    tag: Option<(&str, &str)>,
) -> Result<()> {
    let vals = values.unwrap_or_else(|| panel.values());
    if vals.dim() != panel.values().dim() {
        return Err(AmirlError::DimensionMismatch("values shape differs from panel".into()));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = Vec::new();
    if let Some((name, _)) = tag {
        header.push(name.to_string());
    }
    header.push("unit".into());
    header.push("year".into());
    header.extend(panel.variables().iter().map(|v| v.name.clone()));
    w.write_record(&header)?;
    for r in 0..panel.n_rows() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        if let Some((_, value)) = tag {
            rec.push(value.to_string());
        }
        rec.push(panel.unit_ids()[panel.row_unit()[r]].clone());
        rec.push(panel.time_points()[panel.row_time()[r]].to_string());
        for v in vals.row(r) {
            rec.push(if v.is_nan() { String::new() } else { v.to_string() });
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
