//! Synthetic panels with known sparse coefficients, correlated unit fixed
//! effects, block-correlated covariates and MAR missingness.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{AmirlError, Result};
use crate::panel::{PanelDataset, VarKind, VarRole, Variable};
use crate::seed::{rng_for, Stage};

/// Name of the generated target column.
pub const TARGET_NAME: &str = "y";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub n_units: usize,
    pub n_periods: usize,
    pub n_covariates: usize,
    /// `(covariate index, coefficient)` pairs; all other coefficients are 0.
    pub support: Vec<(usize, f64)>,
    /// Standard deviation of the unit fixed effects.
    pub fe_scale: f64,
    /// Correlation between each unit's fixed effect and the unit-level
    /// component of the first covariate.
    pub fe_correlation: f64,
    pub noise_scale: f64,
    /// Covariates are split into consecutive blocks of this size; covariates
    /// in the same block are equicorrelated.
    pub block_size: usize,
    pub rho: f64,
    /// Share of each covariate's variance that is time-invariant per unit.
    pub unit_share: f64,
    /// Expected share of maskable cells set missing.
    pub missing_rate: f64,
    /// Logistic slope of the missingness probability in the standardised
    /// driver covariate.
    pub mar_strength: f64,
    /// Covariate driving missingness (never masked); defaults to the last.
    pub mar_driver: Option<usize>,
    /// Allow target cells to go missing.
    pub mask_target: bool,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            n_units: 60,
            n_periods: 6,
            n_covariates: 40,
            support: vec![(0, 1.0), (5, -0.8), (10, 0.6), (15, -0.5), (20, 0.7)],
            fe_scale: 1.0,
            fe_correlation: 0.5,
            noise_scale: 1.0,
            block_size: 5,
            rho: 0.7,
            unit_share: 0.3,
            missing_rate: 0.15,
            mar_strength: 1.0,
            mar_driver: None,
            mask_target: true,
            seed: 1,
        }
    }
}

impl ScenarioSpec {
    pub fn driver(&self) -> usize {
        self.mar_driver.unwrap_or(self.n_covariates.saturating_sub(1))
    }

    pub fn beta(&self) -> Vec<f64> {
        let mut beta = vec![0.0; self.n_covariates];
        for &(j, b) in &self.support {
            beta[j] = b;
        }
        beta
    }

    pub fn covariate_names(&self) -> Vec<String> {
        let width = self.n_covariates.to_string().len().max(2);
        (1..=self.n_covariates).map(|k| format!("x{k:0width$}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AmirlError::Config(m));
        if self.n_units < 1 || self.n_periods < 1 || self.n_covariates < 1 {
            return bad("scenario needs N, T, p >= 1".into());
        }
        let mut seen = vec![false; self.n_covariates];
        for &(j, b) in &self.support {
            if j >= self.n_covariates {
                return bad(format!("support index {j} is not below p = {}", self.n_covariates));
            }
            if seen[j] {
                return bad(format!("support index {j} repeated"));
            }
            if !b.is_finite() {
                return bad(format!("coefficient for index {j} is not finite"));
            }
            seen[j] = true;
        }
        if !(0.0..=0.99).contains(&self.rho) {
            return bad(format!("infeasible correlation: rho = {} outside [0, 0.99]", self.rho));
        }
        if !(0.0..=0.9).contains(&self.missing_rate) {
            return bad(format!("missing rate {} outside [0, 0.9]", self.missing_rate));
        }
        if !(0.0..=1.0).contains(&self.unit_share) || !(-1.0..=1.0).contains(&self.fe_correlation) {
            return bad("unit share must lie in [0, 1] and fixed-effect correlation in [-1, 1]".into());
        }
        if self.block_size == 0 {
            return bad("block size must be at least 1".into());
        }
        if !(self.fe_scale >= 0.0 && self.noise_scale >= 0.0 && self.mar_strength.is_finite()) {
            return bad("scales must be non-negative".into());
        }
        if self.driver() >= self.n_covariates {
            return bad(format!("missingness driver {} out of range", self.driver()));
        }
        if self.missing_rate > 0.0 && self.n_covariates < 2 && !self.mask_target {
            return bad("no maskable variable besides the driver".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: ScenarioSpec,
    pub target: String,
    pub covariates: Vec<String>,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    /// `(row, column)` of every masked cell, row-major order; columns index
    /// the emitted panel (target first).
    pub masked: Vec<(usize, usize)>,
    /// Pre-mask values, same layout as the emitted panel.
    pub clean_values: Vec<Vec<f64>>,
}

impl GroundTruth {
    pub fn support(&self) -> Vec<usize> {
        (0..self.beta.len()).filter(|&j| self.beta[j] != 0.0).collect()
    }

    /// Fraction of maskable cells that were masked.
    pub fn masked_fraction(&self) -> f64 {
        let rows = self.clean_values.len();
        let maskable = self.covariates.len() - 1 + usize::from(self.spec.mask_target);
        self.masked.len() as f64 / (rows * maskable) as f64
    }
}

/// Block-equicorrelated standard normal vector of length `p`.
fn block_normal<R: Rng>(rng: &mut R, p: usize, block: usize, rho: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(p);
    let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
    let mut shared = 0.0;
    for k in 0..p {
        if k % block == 0 {
            shared = rng.sample(StandardNormal);
        }
        let own: f64 = rng.sample(StandardNormal);
        out.push(a * shared + b * own);
    }
    out
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Intercept `a` with `mean_r logistic(a + slope * z_r) = rate`.
fn solve_intercept(z: &[f64], slope: f64, rate: f64) -> f64 {
    let mean = |a: f64| z.iter().map(|&v| logistic(a + slope * v)).sum::<f64>() / z.len() as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Draws a scenario. Column 0 of the panel is the target, followed by the
/// covariates.
pub fn generate(spec: &ScenarioSpec) -> Result<(PanelDataset, GroundTruth)> {
    spec.validate()?;
    let (n, t, p) = (spec.n_units, spec.n_periods, spec.n_covariates);
    let rows = n * t;
    let beta = spec.beta();
    let mut rng = rng_for(spec.seed, Stage::Generator, &[0]);

    let s = spec.unit_share;
    let unit_part: Vec<Vec<f64>> = (0..n).map(|_| block_normal(&mut rng, p, spec.block_size, spec.rho)).collect();
    let alpha: Vec<f64> = unit_part
        .iter()
        .map(|c| {
            let xi: f64 = rng.sample(StandardNormal);
            let k = spec.fe_correlation;
            spec.fe_scale * (k * c[0] + (1.0 - k * k).sqrt() * xi)
        })
        .collect();
    let mut clean = Array2::<f64>::zeros((rows, p + 1));
    for r in 0..rows {
        let i = r / t;
        let e = block_normal(&mut rng, p, spec.block_size, spec.rho);
        let mut y = alpha[i];
        for k in 0..p {
            let x = s.sqrt() * unit_part[i][k] + (1.0 - s).sqrt() * e[k];
            clean[[r, k + 1]] = x;
            y += beta[k] * x;
        }
        let eps: f64 = rng.sample(StandardNormal);
        clean[[r, 0]] = y + spec.noise_scale * eps;
    }

    let driver_col = spec.driver() + 1;
    let mut masked = Vec::new();
    let mut values = clean.clone();
    if spec.missing_rate > 0.0 {
        let d: Array1<f64> = clean.column(driver_col).to_owned();
        let mean = d.sum() / rows as f64;
        let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (rows.max(2) - 1) as f64).sqrt();
        let z: Vec<f64> = d.iter().map(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 }).collect();
        let a = solve_intercept(&z, spec.mar_strength, spec.missing_rate);
        let mut mask_rng = rng_for(spec.seed, Stage::Generator, &[1]);
        for r in 0..rows {
            let prob = logistic(a + spec.mar_strength * z[r]);
            for c in 0..=p {
                if c == driver_col || (c == 0 && !spec.mask_target) {
                    continue;
                }
                if mask_rng.random::<f64>() < prob {
                    masked.push((r, c));
                    values[[r, c]] = f64::NAN;
                }
            }
        }
        // keep at least one observed value per column
        for c in 0..=p {
            if values.column(c).iter().all(|v| v.is_nan()) {
                values[[0, c]] = clean[[0, c]];
                masked.retain(|&(r, cc)| !(r == 0 && cc == c));
            }
        }
    }

    let covariates = spec.covariate_names();
    let mut variables = vec![Variable {
        name: TARGET_NAME.into(),
        kind: VarKind::Continuous,
        role: VarRole::Target,
    }];
    variables.extend(covariates.iter().map(|name| Variable {
        name: name.clone(),
        kind: VarKind::Continuous,
        role: VarRole::Covariate,
    }));
    let width = n.to_string().len();
    let panel = PanelDataset::balanced(
        (1..=n).map(|i| format!("u{i:0width$}")).collect(),
        (1..=t as i64).collect(),
        variables,
        values,
    )?;
    let truth = GroundTruth {
        spec: spec.clone(),
        target: TARGET_NAME.into(),
        covariates,
        beta,
        alpha,
        masked,
        clean_values: clean.outer_iter().map(|r| r.to_vec()).collect(),
    };
    Ok((panel, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_under_seed() {
        let spec = ScenarioSpec { n_units: 8, n_periods: 3, n_covariates: 6, support: vec![(0, 1.0)], ..Default::default() };
        let (a, ta) = generate(&spec).unwrap();
        let (b, tb) = generate(&spec).unwrap();
        assert_eq!(ta, tb);
        assert!(a.values().iter().zip(b.values().iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn masked_cells_match_record() {
        let spec = ScenarioSpec { n_units: 20, n_periods: 4, n_covariates: 8, support: vec![(1, 2.0)], ..Default::default() };
        let (panel, truth) = generate(&spec).unwrap();
        let mut from_panel = Vec::new();
        for r in 0..panel.n_rows() {
            for c in 0..panel.n_vars() {
                if !panel.mask()[[r, c]] {
                    from_panel.push((r, c));
                }
            }
        }
        assert_eq!(from_panel, truth.masked);
        let driver = spec.driver() + 1;
        assert!(panel.column(driver).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn invalid_specs_rejected() {
        let base = ScenarioSpec::default();
        assert!(generate(&ScenarioSpec { rho: 0.995, ..base.clone() }).is_err());
        assert!(generate(&ScenarioSpec { missing_rate: 0.95, ..base.clone() }).is_err());
        assert!(generate(&ScenarioSpec { support: vec![(40, 1.0)], ..base.clone() }).is_err());
        assert!(generate(&ScenarioSpec { support: vec![(3, 1.0), (3, 2.0)], ..base }).is_err());
    }

    #[test]
    fn intercept_solver_hits_rate() {
        let z: Vec<f64> = (0..101).map(|i| (i as f64 - 50.0) / 25.0).collect();
        let a = solve_intercept(&z, 1.5, 0.2);
        let mean = z.iter().map(|&v| logistic(a + 1.5 * v)).sum::<f64>() / 101.0;
        assert!((mean - 0.2).abs() < 1e-12);
    }
}
