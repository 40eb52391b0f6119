//! Steps 2 to 4 of the pipeline: block-bootstrapped lasso for importance,
//! random lasso on importance-weighted candidate subsets, stability
//! selection with a BIC-chosen threshold. Also the pooled (common
//! intercept) variant and the mean-imputation lasso-OLS baseline.

mod prepare;
mod steps;

pub use prepare::PreparedSet;
pub use steps::{
    amirl_estimates, block_bootstrap, candidate_count, compute_importance, resample_rows,
    sample_candidates, select_threshold, ImportanceVector, ThresholdChoice,
};

use std::ops::Range;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AmirlError, Result};
use crate::imputation::{
    correlation_diagnostics, placeholder_impute, run_mice, CorrelationRow, ImputationConfig,
    ImputedDataset,
};
use crate::inference::{
    bca_interval, fit_statistics, CoefficientInterval, FitData, FitModel, FitStats, DEFAULT_ALPHAS,
};
use crate::lasso::{
    build_lambda_grid, full_model_sigma2, lambda_max, lasso_path, pooled_lambda_max,
    select_lambda_oc, CriterionKind, LambdaGrid, ScoreFit, SelectionSpec,
};
use crate::linalg::least_squares;
use crate::panel::{recover_fixed_effects, PanelDataset};
use crate::seed::{rng_for, Stage};
use crate::trees::ReemControls;

use prepare::{prepare_set, sample_design};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Fixed effects removed by the within-transformation.
    #[default]
    Amirl,
    /// Common intercept, no fixed effects.
    #[serde(alias = "mirl")]
    MirlPooled,
    /// Single mean imputation, one demeaned lasso-OLS fit.
    #[serde(alias = "lasso-ols", alias = "lasso_ols")]
    LassoOlsMeanimpute,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Amirl => "amirl",
            Mode::MirlPooled => "mirl_pooled",
            Mode::LassoOlsMeanimpute => "lasso_ols_meanimpute",
        }
    }

    fn demeaned(self) -> bool {
        self != Mode::MirlPooled
    }
}

impl FromStr for Mode {
    type Err = AmirlError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "amirl" => Ok(Mode::Amirl),
            "mirl" | "mirl_pooled" | "mirl-pooled" => Ok(Mode::MirlPooled),
            "lasso-ols" | "lasso_ols" | "lasso_ols_meanimpute" => Ok(Mode::LassoOlsMeanimpute),
            other => Err(AmirlError::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub criterion: CriterionKind,
    /// Imputed data sets.
    pub m: usize,
    /// Bootstrap samples per imputed set.
    pub b: usize,
    /// Chained-equation cycles.
    pub cycles: usize,
    /// Candidates per random-lasso run are `floor(p * fraction)`, clamped to
    /// `[1, p]`.
    pub candidate_fraction: f64,
    pub seed: u64,
    pub grid_size: usize,
    pub grid_delta: f64,
    /// Replaces the log-spaced grid when set.
    pub lambda_grid: Option<Vec<f64>>,
    pub score_fit: ScoreFit,
    /// Rows with an imputed target count towards the threshold BIC.
    pub threshold_includes_imputed_target: bool,
    /// Draw bootstrap samples; when off every run uses the full data.
    pub resample: bool,
    /// BCa resamples for the stable-set intervals; 0 skips them.
    pub ci_resamples: usize,
    pub ci_alphas: Vec<f64>,
    pub clip_bounded: bool,
    pub reem: ReemControls,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Amirl,
            criterion: CriterionKind::Bic,
            m: 10,
            b: 100,
            cycles: 20,
            candidate_fraction: 1.0 / 3.0,
            seed: 0,
            grid_size: 100,
            grid_delta: 0.001,
            lambda_grid: None,
            score_fit: ScoreFit::PostOls,
            threshold_includes_imputed_target: true,
            resample: true,
            ci_resamples: 1000,
            ci_alphas: DEFAULT_ALPHAS.to_vec(),
            clip_bounded: true,
            reem: ReemControls::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(AmirlError::Config(msg));
        if self.m == 0 || self.b == 0 || self.cycles == 0 {
            return bad(format!(
                "M, B and cycles must be positive, got M={}, B={}, cycles={}",
                self.m, self.b, self.cycles
            ));
        }
        if !(self.candidate_fraction > 0.0 && self.candidate_fraction <= 1.0) {
            return bad(format!("candidate fraction {} outside (0, 1]", self.candidate_fraction));
        }
        if self.grid_size == 0 || !(self.grid_delta > 0.0 && self.grid_delta <= 1.0) {
            return bad(format!(
                "grid needs K >= 1 and delta in (0, 1], got K={}, delta={}",
                self.grid_size, self.grid_delta
            ));
        }
        if let Some(g) = &self.lambda_grid {
            if g.is_empty() || g.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                return bad("explicit penalty grid must be non-empty and non-negative".into());
            }
        }
        if self.ci_resamples == 1 {
            return bad("BCa needs at least 2 resamples (or 0 to skip)".into());
        }
        if let Some(a) = self.ci_alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return bad(format!("significance level {a} outside (0, 1)"));
        }
        Ok(())
    }

    /// Imputation settings implied by this configuration. The pooled variant
    /// imputes with plain trees.
    pub fn imputation_config(&self) -> ImputationConfig {
        ImputationConfig {
            m: self.m,
            cycles: self.cycles,
            seed: self.seed,
            reem: self.reem,
            clip_bounded: self.clip_bounded,
            use_random_effects: self.mode != Mode::MirlPooled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityResult {
    pub pi_hat: Vec<f64>,
    pub pi_star: f64,
    pub stable_set: Vec<usize>,
    /// `(pi, M-average BIC)` per candidate threshold; `null` is `-inf`.
    pub bic_table: Vec<(f64, f64)>,
    /// Initial estimates were all zero, so no variable is stable.
    pub empty_initial: bool,
    pub threshold_includes_imputed_target: bool,
    /// Per grid point and variable, the number of runs with a nonzero
    /// coefficient.
    pub path_counts: Vec<Vec<u32>>,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitEffect {
    pub unit: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmirlEstimate {
    pub mode: Mode,
    pub criterion: CriterionKind,
    pub config: PipelineConfig,
    pub target: String,
    pub covariates: Vec<String>,
    pub n_units: usize,
    pub n_obs: usize,
    pub grid: LambdaGrid,
    /// Absent for the lasso-OLS baseline.
    pub importance: Option<ImportanceVector>,
    pub stability: StabilityResult,
    /// Standardised scale.
    pub b_init: Vec<f64>,
    /// Standardised scale, zero off the stable set.
    pub b_final: Vec<f64>,
    /// `b_final` mapped back to the original units.
    pub b_final_original: Vec<f64>,
    /// Pooled mode only.
    pub intercept: Option<f64>,
    /// Demeaned modes only.
    pub fixed_effects: Vec<UnitEffect>,
    pub fit: FitStats,
    /// Post-selection within OLS on the stable set, original scale.
    pub intervals: Vec<CoefficientInterval>,
    pub diagnostics: Vec<CorrelationRow>,
    pub notes: Vec<String>,
}

impl AmirlEstimate {
    pub fn selected(&self) -> Vec<bool> {
        let mut out = vec![false; self.covariates.len()];
        for &j in &self.stability.stable_set {
            out[j] = true;
        }
        out
    }
}

fn check_input(data: &PanelDataset, mode: Mode) -> Result<(usize, Vec<usize>)> {
    if data.n_rows() == 0 {
        return Err(AmirlError::NoData);
    }
    let target = data
        .target_index()
        .ok_or_else(|| AmirlError::Config("no target variable".into()))?;
    let covariates = data.covariate_indices();
    if covariates.is_empty() {
        return Err(AmirlError::Config("no covariates".into()));
    }
    if mode == Mode::Amirl {
        data.ensure_balanced()?;
    }
    Ok((target, covariates))
}

/// Step 1: `M` chained-equation imputations, or a single mean imputation for
/// the lasso-OLS baseline.
pub fn impute(data: &PanelDataset, config: &PipelineConfig) -> Result<Vec<ImputedDataset>> {
    config.validate()?;
    check_input(data, config.mode)?;
    match config.mode {
        Mode::LassoOlsMeanimpute => Ok(vec![ImputedDataset {
            m: 0,
            stream_seed: 0,
            cycles: 0,
            values: placeholder_impute(data)?,
            mask: data.mask().to_owned(),
        }]),
        _ => run_mice(data, &config.imputation_config()),
    }
}

/// The full pipeline on one dataset.
pub fn run_pipeline(data: &PanelDataset, config: &PipelineConfig) -> Result<AmirlEstimate> {
    let imputed = impute(data, config)?;
    estimate_from_imputed(data, &imputed, config)
}

fn unit_labels(data: &PanelDataset, blocks: &[Range<usize>]) -> Vec<String> {
    blocks
        .iter()
        .map(|b| data.unit_ids()[data.row_unit()[b.start]].clone())
        .collect()
}

/// Standardises (and for the fixed-effects modes demeans) each completed set.
pub fn prepare_sets(
    data: &PanelDataset,
    imputed: &[ImputedDataset],
    mode: Mode,
) -> Result<Vec<PreparedSet>> {
    let (target, covariates) = check_input(data, mode)?;
    let names: Vec<String> = data.variables().iter().map(|v| v.name.clone()).collect();
    let blocks = data.unit_blocks();
    let labels = unit_labels(data, &blocks);
    let target_mask: Vec<bool> = data.mask().column(target).to_vec();
    imputed
        .par_iter()
        .map(|d| {
            if d.values.dim() != data.values().dim() {
                return Err(AmirlError::DimensionMismatch(
                    "imputed set does not match the source panel".into(),
                ));
            }
            prepare_set(
                d.values.view(),
                &target_mask,
                target,
                &covariates,
                &names,
                &blocks,
                &labels,
                mode.demeaned(),
            )
        })
        .collect()
}

/// Steps 2 to 4 plus de-standardisation, fit statistics, intervals and
/// imputation diagnostics, on already imputed data.
pub fn estimate_from_imputed(
    data: &PanelDataset,
    imputed: &[ImputedDataset],
    config: &PipelineConfig,
) -> Result<AmirlEstimate> {
    config.validate()?;
    if imputed.is_empty() {
        return Err(AmirlError::NoData);
    }
    let (target, covariates) = check_input(data, config.mode)?;
    let sets = prepare_sets(data, imputed, config.mode)?;
    let mut notes = Vec::new();

    let (grid, importance, b_init, stability) = match config.mode {
        Mode::LassoOlsMeanimpute => {
            let (grid, b, stab) = lasso_ols(&sets[0], config)?;
            (grid, None, b, stab)
        }
        _ => {
            let block_ok = data.is_balanced();
            if !block_ok {
                notes.push("unbalanced panel: bootstrap draws rows, not unit blocks".into());
            }
            let r = random_lasso(&sets, config, block_ok)?;
            (r.0, Some(r.1), r.2, r.3)
        }
    };
    if stability.empty_initial {
        notes.push("all initial estimates are zero; the stable set is empty".into());
    }
    if !config.threshold_includes_imputed_target && config.mode != Mode::LassoOlsMeanimpute {
        notes.push("threshold BIC uses rows with an observed target only".into());
    }
    let b_final = amirl_estimates(&b_init, &stability.stable_set);

    let p = covariates.len();
    let m = sets.len() as f64;
    let scale: Vec<f64> = (0..p)
        .map(|j| sets.iter().map(|s| s.y_sd / s.x_sd[j]).sum::<f64>() / m)
        .collect();
    let b_orig: Vec<f64> = b_final.iter().zip(&scale).map(|(b, s)| b * s).collect();

    let blocks = data.unit_blocks();
    let labels = unit_labels(data, &blocks);
    let levels: Vec<FitData> = sets.iter().map(|s| s.level.clone()).collect();
    let (intercept, fixed_effects, model) = if config.mode.demeaned() {
        let mut alpha = Array1::<f64>::zeros(blocks.len());
        for s in &sets {
            alpha += &recover_fixed_effects(&b_orig, s.level.y.view(), s.level.x.view(), &blocks)?;
        }
        alpha /= m;
        let fe = labels
            .iter()
            .zip(alpha.iter())
            .map(|(u, &v)| UnitEffect { unit: u.clone(), value: v })
            .collect();
        (None, fe, FitModel::FixedEffects)
    } else {
        let c = sets
            .iter()
            .map(|s| s.y_mean - b_orig.iter().zip(&s.x_mean).map(|(b, x)| b * x).sum::<f64>())
            .sum::<f64>()
            / m;
        (Some(c), Vec::new(), FitModel::Pooled { intercept: c })
    };
    let fit = fit_statistics(&levels, &b_orig, model)?;

    let mut intervals = Vec::new();
    if config.ci_resamples > 0 && !stability.stable_set.is_empty() {
        let stable = &stability.stable_set;
        let demean = config.mode.demeaned();
        for (pos, &j) in stable.iter().enumerate() {
            let est = |units: &[usize]| -> Result<f64> {
                Ok(stable_set_ols(&levels, units, stable, demean)[pos])
            };
            intervals.extend(bca_interval(
                est,
                blocks.len(),
                &config.ci_alphas,
                config.ci_resamples,
                config.seed,
                j,
            )?);
        }
    }

    let diagnostics = if config.mode == Mode::LassoOlsMeanimpute {
        Vec::new()
    } else {
        correlation_diagnostics(data, imputed)
    };

    let names = data.variables();
    Ok(AmirlEstimate {
        mode: config.mode,
        criterion: config.criterion,
        config: config.clone(),
        target: names[target].name.clone(),
        covariates: covariates.iter().map(|&j| names[j].name.clone()).collect(),
        n_units: blocks.len(),
        n_obs: data.n_rows(),
        grid,
        importance,
        stability,
        b_init,
        b_final,
        b_final_original: b_orig,
        intercept,
        fixed_effects,
        fit,
        intervals,
        diagnostics,
        notes,
    })
}

/// OLS on the stable columns over the rows of the listed units (repeats
/// allowed), within-transformed per drawn block or centred for the pooled
/// model, averaged over the data sets.
pub fn stable_set_ols(sets: &[FitData], units: &[usize], cols: &[usize], demean: bool) -> Vec<f64> {
    let mut acc = vec![0.0; cols.len()];
    for d in sets {
        let n: usize = units.iter().map(|&u| d.blocks[u].len()).sum();
        let mut y = Array1::<f64>::zeros(n);
        let mut x = Array2::<f64>::zeros((n, cols.len()));
        let mut r = 0;
        let mut drawn = Vec::with_capacity(units.len());
        for &u in units {
            let block = d.blocks[u].clone();
            drawn.push(r..r + block.len());
            for src in block {
                y[r] = d.y[src];
                for (k, &j) in cols.iter().enumerate() {
                    x[[r, k]] = d.x[[src, j]];
                }
                r += 1;
            }
        }
        let groups = if demean { drawn } else { vec![0..n] };
        for g in groups {
            let len = g.len() as f64;
            let ym = y.slice(ndarray::s![g.clone()]).sum() / len;
            y.slice_mut(ndarray::s![g.clone()]).mapv_inplace(|v| v - ym);
            let mut xs = x.slice_mut(ndarray::s![g.clone(), ..]);
            let xm = xs.sum_axis(Axis(0)) / len;
            xs -= &xm;
        }
        let all: Vec<usize> = (0..cols.len()).collect();
        let ls = least_squares(x.view(), y.view(), &all);
        for (a, c) in acc.iter_mut().zip(&ls.coefficients) {
            *a += c;
        }
    }
    acc.iter().map(|a| a / sets.len() as f64).collect()
}

fn tag<T>(r: Result<T>, stage: &'static str, m: usize, b: usize) -> Result<T> {
    r.map_err(|e| AmirlError::Resample {
        stage,
        m,
        b,
        source: Box::new(e),
    })
}

fn grid_for(config: &PipelineConfig, lmax: f64) -> Result<LambdaGrid> {
    match &config.lambda_grid {
        Some(values) => Ok(LambdaGrid {
            values: values.clone(),
            lambda_max: lmax,
            delta: config.grid_delta,
        }),
        None => build_lambda_grid(lmax, config.grid_size, config.grid_delta),
    }
}

fn selection_spec(
    config: &PipelineConfig,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    n_fixed: usize,
) -> Result<SelectionSpec> {
    let sigma2_hat = match config.criterion {
        CriterionKind::Cp => Some(full_model_sigma2(x, y, n_fixed)?),
        _ => None,
    };
    Ok(SelectionSpec {
        kind: config.criterion,
        n_fixed,
        sigma2_hat,
        score_fit: config.score_fit,
    })
}

/// One bootstrap sample: the resampled design with its selection spec.
struct Sample {
    y: Array1<f64>,
    x: Array2<f64>,
    spec: SelectionSpec,
}

fn draw_rows(set: &PreparedSet, config: &PipelineConfig, block_ok: bool, m: usize, b: usize) -> Option<Vec<usize>> {
    if !config.resample {
        return None;
    }
    let mut rng = rng_for(config.seed, Stage::Bootstrap, &[m as u64, b as u64]);
    Some(if block_ok {
        resample_rows(&set.blocks, &block_bootstrap(set.blocks.len(), &mut rng))
    } else {
        let n = set.y.len();
        (0..n).map(|_| rng.random_range(0..n)).collect()
    })
}

type RandomLasso = (LambdaGrid, ImportanceVector, Vec<f64>, StabilityResult);

fn random_lasso(sets: &[PreparedSet], config: &PipelineConfig, block_ok: bool) -> Result<RandomLasso> {
    let p = sets[0].x.ncols();
    let jobs: Vec<(usize, usize)> = (0..sets.len())
        .flat_map(|m| (0..config.b).map(move |b| (m, b)))
        .collect();
    let centre = !config.mode.demeaned();

    // Step 2: one sample per (m, b), reused by Steps 3 and 4.
    let samples: Vec<(Sample, f64)> = jobs
        .par_iter()
        .map(|&(m, b)| {
            let set = &sets[m];
            let rows = draw_rows(set, config, block_ok, m, b);
            let (y, x) = sample_design(set, rows.as_deref(), centre);
            let lmax = tag(lambda_max(x.view(), y.view()), "importance", m, b)?;
            let spec = tag(selection_spec(config, x.view(), y.view(), set.n_fixed), "importance", m, b)?;
            Ok((Sample { y, x, spec }, lmax))
        })
        .collect::<Result<_>>()?;
    let grid = grid_for(config, pooled_lambda_max(samples.iter().map(|s| s.1)))?;
    log::debug!("shared penalty grid: {} points from {:e}", grid.values.len(), grid.lambda_max);

    let estimates: Vec<Vec<f64>> = jobs
        .par_iter()
        .zip(&samples)
        .map(|(&(m, b), (s, _))| {
            let sel = tag(select_lambda_oc(s.x.view(), s.y.view(), &grid.values, s.spec), "importance", m, b)?;
            Ok(sel.post.coefficients)
        })
        .collect::<Result<_>>()?;
    let importance = compute_importance(estimates)?;
    let count = candidate_count(p, config.candidate_fraction);

    // Step 3: random lasso on importance-weighted candidate subsets.
    let initial: Vec<Vec<f64>> = jobs
        .par_iter()
        .zip(&samples)
        .map(|(&(m, b), (s, _))| {
            let mut rng = rng_for(config.seed, Stage::CandidatesInit, &[m as u64, b as u64]);
            let cand = tag(sample_candidates(&importance.values, count, &mut rng), "initial estimates", m, b)?;
            let xs = s.x.select(Axis(1), &cand);
            let sel = tag(select_lambda_oc(xs.view(), s.y.view(), &grid.values, s.spec), "initial estimates", m, b)?;
            let mut full = vec![0.0; p];
            for (k, &j) in cand.iter().enumerate() {
                full[j] = sel.post.coefficients[k];
            }
            Ok(full)
        })
        .collect::<Result<_>>()?;
    let runs = jobs.len();
    let mut b_init = vec![0.0; p];
    for v in &initial {
        for (a, x) in b_init.iter_mut().zip(v) {
            *a += x;
        }
    }
    for a in &mut b_init {
        *a /= runs as f64;
    }

    // Step 4: selection frequencies along the grid.
    let paths: Vec<Vec<Vec<bool>>> = jobs
        .par_iter()
        .zip(&samples)
        .map(|(&(m, b), (s, _))| {
            let mut rng = rng_for(config.seed, Stage::CandidatesStability, &[m as u64, b as u64]);
            let cand = tag(sample_candidates(&importance.values, count, &mut rng), "stability", m, b)?;
            let xs = s.x.select(Axis(1), &cand);
            let path = tag(lasso_path(xs.view(), s.y.view(), &grid.values), "stability", m, b)?;
            Ok(path
                .iter()
                .map(|sol| {
                    let mut active = vec![false; p];
                    for &k in &sol.active_set {
                        active[cand[k]] = true;
                    }
                    active
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut counts = vec![vec![0u32; p]; grid.values.len()];
    for path in &paths {
        for (row, active) in counts.iter_mut().zip(path) {
            for (c, &a) in row.iter_mut().zip(active) {
                *c += u32::from(a);
            }
        }
    }
    let pi_hat: Vec<f64> = (0..p)
        .map(|j| counts.iter().map(|row| row[j]).max().unwrap_or(0) as f64 / runs as f64)
        .collect();

    let choice = select_threshold(&pi_hat, &b_init, sets, !config.threshold_includes_imputed_target)?;
    let stability = StabilityResult {
        pi_hat,
        pi_star: choice.pi_star,
        stable_set: choice.stable_set,
        bic_table: choice.bic_table,
        empty_initial: choice.empty_initial,
        threshold_includes_imputed_target: config.threshold_includes_imputed_target,
        path_counts: counts,
        runs,
    };
    Ok((grid, importance, b_init, stability))
}

/// Lasso with the criterion-chosen penalty and an OLS refit, on one set.
fn lasso_ols(set: &PreparedSet, config: &PipelineConfig) -> Result<(LambdaGrid, Vec<f64>, StabilityResult)> {
    let (y, x) = sample_design(set, None, false);
    let grid = grid_for(config, lambda_max(x.view(), y.view())?)?;
    let spec = selection_spec(config, x.view(), y.view(), set.n_fixed)?;
    let sel = select_lambda_oc(x.view(), y.view(), &grid.values, spec)?;
    let b = sel.post.coefficients;
    let stable_set: Vec<usize> = (0..b.len()).filter(|&j| b[j] != 0.0).collect();
    let pi_hat = (0..b.len()).map(|j| if b[j] != 0.0 { 1.0 } else { 0.0 }).collect();
    let stability = StabilityResult {
        pi_hat,
        pi_star: 1.0,
        empty_initial: stable_set.is_empty(),
        stable_set,
        bic_table: Vec::new(),
        threshold_includes_imputed_target: true,
        path_counts: Vec::new(),
        runs: 1,
    };
    Ok((grid, b, stability))
}
