//! `amirl` command-line driver.
//!
//! Exit codes: 0 success, 2 input error, 3 configuration error, 4 numerical
//! failure.

mod config;
mod evaluate;
mod fit;
mod window;

use std::path::PathBuf;
use std::process::ExitCode;

use amirl_core::error::{AmirlError, ErrorClass};
use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{CliError, CriterionChoice};

#[derive(Parser, Debug)]
#[command(name = "amirl", version, about = "Sparse model selection for incomplete fixed-effects panels")]
struct Cli {
    /// Worker threads (0 = one per core). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CriterionArg {
    Bic,
    Aic,
    Cp,
    All,
}

impl From<CriterionArg> for CriterionChoice {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::Bic => CriterionChoice::Bic,
            CriterionArg::Aic => CriterionChoice::Aic,
            CriterionArg::Cp => CriterionChoice::Cp,
            CriterionArg::All => CriterionChoice::All,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Amirl,
    Mirl,
    #[value(name = "lasso-ols")]
    LassoOls,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rank balanced windows of a long-format table.
    SelectWindow {
        /// Long CSV: unit,year,variable,value.
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        min_length: usize,
        /// Windows within this fraction of the largest panel rank by length.
        #[arg(long, default_value_t = 0.01)]
        slack: f64,
        /// Count a unit-year only if these variables are present and non-zero
        /// (default: any variable).
        #[arg(long = "require", value_name = "NAME")]
        require: Vec<String>,
        /// Write the top window as a balanced wide CSV.
        #[arg(long, value_name = "FILE")]
        emit_balanced: Option<PathBuf>,
        /// Print only the first N windows.
        #[arg(long)]
        top: Option<usize>,
    },
    /// Run the selection pipeline on a balanced wide CSV.
    Fit(fit::FitArgs),
    /// Draw a synthetic scenario with known truth.
    Simulate(fit::SimulateArgs),
    /// Compare a report with the truth of a simulated scenario.
    Evaluate {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<AmirlError>() {
            return match e.class() {
                ErrorClass::Input => 2,
                ErrorClass::Config => 3,
                ErrorClass::Numerical => 4,
            };
        }
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Input(_) => 2,
                CliError::Config(_) => 3,
            };
        }
    }
    2
}

fn run(cli: Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::SelectWindow {
            input,
            min_length,
            slack,
            require,
            emit_balanced,
            top,
        } => window::cmd_select_window(&input, min_length, slack, require, emit_balanced.as_deref(), top),
        Command::Fit(args) => fit::cmd_fit(&args),
        Command::Simulate(args) => fit::cmd_simulate(&args),
        Command::Evaluate { report, truth, json } => evaluate::cmd_evaluate(&report, &truth, json),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AMIRL_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
