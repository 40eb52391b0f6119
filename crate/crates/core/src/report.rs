//! CSV tables for a finished estimate.

use std::io::Write;

use crate::amirl::AmirlEstimate;
use crate::error::Result;
use crate::imputation::CorrelationScale;

/// Level whose interval fills `ci_low` / `ci_high`.
pub const CSV_INTERVAL_ALPHA: f64 = 0.05;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per covariate: `variable,pi_hat,b_init,b_final,selected,ci_low,ci_high`
/// plus the original-scale coefficient. Pooled fits get a leading
/// `(intercept)` row.
pub fn write_coefficients_csv<W: Write>(writer: W, est: &AmirlEstimate) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "variable",
        "pi_hat",
        "b_init",
        "b_final",
        "selected",
        "ci_low",
        "ci_high",
        "b_final_original",
    ])?;
    if let Some(c) = est.intercept {
        w.write_record(["(intercept)", "", "", "", "true", "", "", &c.to_string()])?;
    }
    let selected = est.selected();
    for (j, name) in est.covariates.iter().enumerate() {
        let ci = est
            .intervals
            .iter()
            .find(|c| c.variable == j && c.alpha == CSV_INTERVAL_ALPHA);
        w.write_record([
            name.as_str(),
            &est.stability.pi_hat[j].to_string(),
            &est.b_init[j].to_string(),
            &est.b_final[j].to_string(),
            if selected[j] { "true" } else { "false" },
            &opt(ci.map(|c| c.lower)),
            &opt(ci.map(|c| c.upper)),
            &est.b_final_original[j].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Long table of selection frequencies along the penalty grid:
/// `variable,lambda_index,lambda,frequency`.
pub fn write_stability_csv<W: Write>(writer: W, est: &AmirlEstimate) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["variable", "lambda_index", "lambda", "frequency"])?;
    let runs = est.stability.runs.max(1) as f64;
    for (k, row) in est.stability.path_counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            w.write_record([
                est.covariates[j].as_str(),
                &k.to_string(),
                &est.grid.values[k].to_string(),
                &(c as f64 / runs).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Correlation diagnostics of the imputations.
pub fn write_diagnostics_csv<W: Write>(writer: W, est: &AmirlEstimate) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "scale",
        "var_a",
        "var_b",
        "complete_cases",
        "pairwise_r",
        "mean_imputed_r",
        "sd_imputed_r",
    ])?;
    for d in &est.diagnostics {
        let scale = match d.scale {
            CorrelationScale::Raw => "raw",
            CorrelationScale::Within => "within",
        };
        w.write_record([
            scale,
            &d.var_a,
            &d.var_b,
            &d.complete_cases.to_string(),
            &opt(d.pairwise_r),
            &d.mean_imputed_r.to_string(),
            &opt(d.sd_imputed_r),
        ])?;
    }
    w.flush()?;
    Ok(())
}
