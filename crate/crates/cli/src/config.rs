//! TOML run configuration. Every key is optional; command-line flags win
//! over the file, the file wins over built-in defaults.

use std::path::Path;

use amirl_core::amirl::{Mode, PipelineConfig};
use amirl_core::lasso::{CriterionKind, ScoreFit};
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// `bic`, `aic`, `cp` or `all`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionChoice {
    Bic,
    Aic,
    Cp,
    All,
}

impl CriterionChoice {
    pub fn kinds(self) -> Vec<CriterionKind> {
        match self {
            CriterionChoice::Bic => vec![CriterionKind::Bic],
            CriterionChoice::Aic => vec![CriterionKind::Aic],
            CriterionChoice::Cp => vec![CriterionKind::Cp],
            CriterionChoice::All => CriterionKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSection {
    pub max_depth: Option<usize>,
    pub min_leaf: Option<usize>,
    pub cp: Option<f64>,
    pub cv_folds: Option<usize>,
    pub cv_rounds: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReemSection {
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub lmm_tol: Option<f64>,
    pub lmm_max_iter: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub target: Option<String>,
    #[serde(default)]
    pub exclude: Vec<String>,
    /// Regressors that (nearly) restate the target; dropped with
    /// `--exclude-target-derived`.
    #[serde(default)]
    pub target_derived: Vec<String>,
    /// Variables to treat as binary even if the data would allow otherwise.
    #[serde(default)]
    pub binary: Vec<String>,
    pub mode: Option<Mode>,
    pub criterion: Option<CriterionChoice>,
    pub m: Option<usize>,
    pub b: Option<usize>,
    pub cycles: Option<usize>,
    pub seed: Option<u64>,
    pub candidate_fraction: Option<f64>,
    pub grid_size: Option<usize>,
    pub grid_delta: Option<f64>,
    pub score_fit: Option<ScoreFit>,
    pub threshold_includes_imputed_target: Option<bool>,
    pub ci_resamples: Option<usize>,
    pub ci_alphas: Option<Vec<f64>>,
    pub clip_bounded: Option<bool>,
    #[serde(default)]
    pub tree: TreeSection,
    #[serde(default)]
    pub reem: ReemSection,
}

/// Failures detected by the command-line layer itself.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Input(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::Input(m) => write!(f, "input error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())).into())
    }

    /// Applies the file's keys on top of `base`.
    pub fn apply(&self, base: &mut PipelineConfig) {
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = self.$field.clone() {
                    base.$field = v;
                }
            };
        }
        set!(mode);
        set!(m);
        set!(b);
        set!(cycles);
        set!(seed);
        set!(candidate_fraction);
        set!(grid_size);
        set!(grid_delta);
        set!(score_fit);
        set!(threshold_includes_imputed_target);
        set!(ci_resamples);
        set!(ci_alphas);
        set!(clip_bounded);
        let t = &mut base.reem.tree;
        if let Some(v) = self.tree.max_depth {
            t.max_depth = v;
        }
        if let Some(v) = self.tree.min_leaf {
            t.min_leaf = v;
        }
        if let Some(v) = self.tree.cp {
            t.cp = v;
        }
        if let Some(v) = self.tree.cv_folds {
            t.cv_folds = v;
        }
        if let Some(v) = self.tree.cv_rounds {
            t.cv_rounds = v;
        }
        let r = &mut base.reem;
        if let Some(v) = self.reem.tol {
            r.tol = v;
        }
        if let Some(v) = self.reem.max_iter {
            r.max_iter = v;
        }
        if let Some(v) = self.reem.lmm_tol {
            r.lmm.tol = v;
        }
        if let Some(v) = self.reem.lmm_max_iter {
            r.lmm.max_iter = v;
        }
    }
}
