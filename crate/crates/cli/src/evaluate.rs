use std::fs;
use std::path::Path;

use amirl_core::datagen::GroundTruth;
use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

use crate::config::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub mode: String,
    pub criterion: String,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Root mean squared error of the original-scale coefficients over the
    /// true support.
    pub rmse_support: f64,
    pub r2_within: f64,
    pub r2_within_adj: f64,
    pub r2_overall: f64,
    pub r2_overall_adj: f64,
}

fn bad(msg: impl Into<String>) -> anyhow::Error {
    CliError::Input(msg.into()).into()
}

fn field<'a>(v: &'a Value, path: &[&str]) -> Result<&'a Value> {
    let mut cur = v;
    for key in path {
        cur = cur.get(key).ok_or_else(|| bad(format!("report lacks `{}`", path.join("."))))?;
    }
    Ok(cur)
}

fn number(v: &Value, path: &[&str]) -> Result<f64> {
    field(v, path)?
        .as_f64()
        .ok_or_else(|| bad(format!("`{}` is not a number", path.join("."))))
}

fn fit_metrics(fit: &Value, truth: &GroundTruth) -> Result<Metrics> {
    let covariates: Vec<String> = serde_json::from_value(field(fit, &["covariates"])?.clone())?;
    if covariates != truth.covariates {
        return Err(bad("report and truth use different covariates"));
    }
    let stable: Vec<usize> = serde_json::from_value(field(fit, &["stability", "stable_set"])?.clone())?;
    let b: Vec<f64> = serde_json::from_value(field(fit, &["b_final_original"])?.clone())?;
    if b.len() != truth.beta.len() {
        return Err(bad("coefficient vector length differs from truth"));
    }
    let support = truth.support();
    let tp = stable.iter().filter(|j| support.contains(j)).count();
    let sq: f64 = support.iter().map(|&j| (b[j] - truth.beta[j]).powi(2)).sum();
    let rmse = if support.is_empty() { 0.0 } else { (sq / support.len() as f64).sqrt() };
    let text = |path: &[&str]| -> Result<String> {
        Ok(field(fit, path)?.as_str().unwrap_or_default().to_string())
    };
    Ok(Metrics {
        mode: text(&["mode"])?,
        criterion: text(&["criterion"])?,
        true_positives: tp,
        false_positives: stable.len() - tp,
        false_negatives: support.len() - tp,
        rmse_support: rmse,
        r2_within: number(fit, &["fit", "r2_within"])?,
        r2_within_adj: number(fit, &["fit", "r2_within_adj"])?,
        r2_overall: number(fit, &["fit", "r2_overall"])?,
        r2_overall_adj: number(fit, &["fit", "r2_overall_adj"])?,
    })
}

pub fn evaluate(report: &Value, truth: &GroundTruth) -> Result<Vec<Metrics>> {
    let fits = field(report, &["fits"])?
        .as_array()
        .ok_or_else(|| bad("`fits` is not a list"))?;
    fits.iter().map(|f| fit_metrics(f, truth)).collect()
}

pub fn cmd_evaluate(report: &Path, truth: &Path, json: bool) -> Result<()> {
    let report: Value = serde_json::from_str(
        &fs::read_to_string(report).with_context(|| format!("reading {}", report.display()))?,
    )?;
    let truth: GroundTruth = serde_json::from_str(
        &fs::read_to_string(truth).with_context(|| format!("reading {}", truth.display()))?,
    )?;
    let metrics = evaluate(&report, &truth)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&metrics)?);
        return Ok(());
    }
    println!("mode,criterion,tp,fp,fn,rmse_support,r2_within,r2_within_adj,r2_overall,r2_overall_adj");
    for m in &metrics {
        println!(
            "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            m.mode,
            m.criterion,
            m.true_positives,
            m.false_positives,
            m.false_negatives,
            m.rmse_support,
            m.r2_within,
            m.r2_within_adj,
            m.r2_overall,
            m.r2_overall_adj
        );
    }
    Ok(())
}
