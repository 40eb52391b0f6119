use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use amirl_core::amirl::{estimate_from_imputed, impute, AmirlEstimate, Mode, PipelineConfig};
use amirl_core::datagen::{generate, ScenarioSpec};
use amirl_core::imputation::ImputationConfig;
use amirl_core::lasso::CriterionKind;
use amirl_core::panel::{read_wide_csv, write_wide_csv, VarKind, VarRole};
use amirl_core::report::{write_coefficients_csv, write_diagnostics_csv, write_stability_csv};
use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::config::{CliError, CriterionChoice, FileConfig};
use crate::{CriterionArg, ModeArg};

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Balanced wide CSV: unit,year,<variables...>.
    pub input: PathBuf,
    /// TOML configuration (see docs/config.md).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub criterion: Option<CriterionArg>,
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, num_args = 1..)]
    pub exclude: Vec<String>,
    /// Also exclude the config's `target_derived` variables.
    #[arg(long)]
    pub exclude_target_derived: bool,
    #[arg(short = 'M')]
    pub m: Option<usize>,
    #[arg(short = 'B')]
    pub b: Option<usize>,
    #[arg(long)]
    pub cycles: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// BCa resamples (0 skips the intervals).
    #[arg(long)]
    pub ci_resamples: Option<usize>,
    #[arg(long, default_value = "amirl-out")]
    pub out: PathBuf,
}

/// Everything needed to reproduce a report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub inputs: Vec<String>,
    pub config_path: Option<String>,
    pub target: String,
    pub excluded: Vec<String>,
    pub criteria: Vec<CriterionKind>,
    pub seed: u64,
    pub pipeline: PipelineConfig,
    pub imputation: ImputationConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTimings {
    pub imputation_s: f64,
    /// One entry per criterion, in run order.
    pub estimation_s: Vec<f64>,
    pub total_s: f64,
}

/// Written next to the report; holds what varies between identical runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub manifest: RunManifest,
    pub threads: usize,
    pub started_unix_s: u64,
    pub timings: StageTimings,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report<'a> {
    pub manifest: &'a RunManifest,
    pub fits: &'a [AmirlEstimate],
}

fn resolve(args: &FitArgs, file: &FileConfig) -> Result<(PipelineConfig, Vec<CriterionKind>)> {
    let mut cfg = PipelineConfig::default();
    file.apply(&mut cfg);
    if let Some(mode) = args.mode {
        cfg.mode = match mode {
            ModeArg::Amirl => Mode::Amirl,
            ModeArg::Mirl => Mode::MirlPooled,
            ModeArg::LassoOls => Mode::LassoOlsMeanimpute,
        };
    }
    if let Some(v) = args.m {
        cfg.m = v;
    }
    if let Some(v) = args.b {
        cfg.b = v;
    }
    if let Some(v) = args.cycles {
        cfg.cycles = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.ci_resamples {
        cfg.ci_resamples = v;
    }
    let choice = args
        .criterion
        .map(CriterionChoice::from)
        .or(file.criterion)
        .unwrap_or(CriterionChoice::Bic);
    let kinds = choice.kinds();
    cfg.criterion = kinds[0];
    cfg.validate()?;
    Ok((cfg, kinds))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let started = Instant::now();
    let file_cfg = match &args.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let (cfg, kinds) = resolve(args, &file_cfg)?;

    let input = File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let mut data = read_wide_csv(BufReader::new(input))?;
    let target = args
        .target
        .clone()
        .or_else(|| file_cfg.target.clone())
        .ok_or_else(|| CliError::Config("no target variable given (--target or `target`)".into()))?;
    data.set_role(&target, VarRole::Target)?;
    let mut excluded: Vec<String> = file_cfg.exclude.clone();
    excluded.extend(args.exclude.iter().cloned());
    if args.exclude_target_derived {
        excluded.extend(file_cfg.target_derived.iter().cloned());
    }
    excluded.sort();
    excluded.dedup();
    for name in &excluded {
        if *name == target {
            return Err(CliError::Config(format!("target `{name}` cannot be excluded")).into());
        }
        data.set_role(name, VarRole::Excluded)?;
    }
    for name in &file_cfg.binary {
        data.set_kind(name, VarKind::Binary)?;
    }

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        inputs: vec![args.input.display().to_string()],
        config_path: args.config.as_ref().map(|p| p.display().to_string()),
        target,
        excluded,
        criteria: kinds.clone(),
        seed: cfg.seed,
        pipeline: cfg.clone(),
        imputation: cfg.imputation_config(),
    };

    let t0 = Instant::now();
    let imputed = impute(&data, &cfg)?;
    let imputation_s = t0.elapsed().as_secs_f64();
    log::info!("imputation finished in {imputation_s:.2} s");
    let mut fits = Vec::with_capacity(kinds.len());
    let mut estimation_s = Vec::with_capacity(kinds.len());
    for &kind in &kinds {
        let t = Instant::now();
        let run_cfg = PipelineConfig { criterion: kind, ..cfg.clone() };
        fits.push(estimate_from_imputed(&data, &imputed, &run_cfg)?);
        estimation_s.push(t.elapsed().as_secs_f64());
        log::info!("{} selection finished", kind.name());
    }

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_file(&args.out.join("report.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &Report { manifest: &manifest, fits: &fits })?;
        writeln!(w)?;
        Ok(())
    })?;
    for est in &fits {
        let suffix = if fits.len() > 1 {
            format!("_{}", est.criterion.name())
        } else {
            String::new()
        };
        write_file(&args.out.join(format!("coefficients{suffix}.csv")), |w| {
            Ok(write_coefficients_csv(w, est)?)
        })?;
        write_file(&args.out.join(format!("stability{suffix}.csv")), |w| {
            Ok(write_stability_csv(w, est)?)
        })?;
        write_file(&args.out.join(format!("diagnostics{suffix}.csv")), |w| {
            Ok(write_diagnostics_csv(w, est)?)
        })?;
    }
    let record = RunRecord {
        manifest,
        threads: rayon::current_num_threads(),
        started_unix_s: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        timings: StageTimings {
            imputation_s,
            estimation_s,
            total_s: started.elapsed().as_secs_f64(),
        },
    };
    write_file(&args.out.join("run_manifest.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &record)?;
        writeln!(w)?;
        Ok(())
    })?;

    for est in &fits {
        let stable: Vec<&str> = est
            .stability
            .stable_set
            .iter()
            .map(|&j| est.covariates[j].as_str())
            .collect();
        println!(
            "{} {}: pi* = {:.3}, stable set ({}): {}",
            est.mode.name(),
            est.criterion.name(),
            est.stability.pi_star,
            stable.len(),
            stable.join(" ")
        );
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// TOML scenario (keys as in the truth file's `spec`).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub n_units: Option<usize>,
    #[arg(long)]
    pub n_periods: Option<usize>,
    #[arg(long = "p")]
    pub n_covariates: Option<usize>,
    #[arg(long)]
    pub missing_rate: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "amirl-sim")]
    pub out: PathBuf,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<ScenarioSpec>(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => ScenarioSpec::default(),
    };
    if let Some(v) = args.n_units {
        spec.n_units = v;
    }
    if let Some(v) = args.n_periods {
        spec.n_periods = v;
    }
    if let Some(v) = args.n_covariates {
        spec.n_covariates = v;
        spec.support.retain(|(j, _)| *j < v);
    }
    if let Some(v) = args.missing_rate {
        spec.missing_rate = v;
    }
    if let Some(v) = args.noise {
        spec.noise_scale = v;
    }
    if let Some(v) = args.rho {
        spec.rho = v;
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    let (panel, truth) = generate(&spec)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_file(&args.out.join("panel.csv"), |w| Ok(write_wide_csv(w, &panel, None, None)?))?;
    write_file(&args.out.join("truth.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &truth)?;
        writeln!(w)?;
        Ok(())
    })?;
    println!(
        "{} rows, {} covariates, {} masked cells written to {}",
        panel.n_rows(),
        truth.covariates.len(),
        truth.masked.len(),
        args.out.display()
    );
    Ok(())
}
