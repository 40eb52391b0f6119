//! Random-intercept linear mixed model with leaf-indicator fixed effects,
//! fit by restricted maximum likelihood.
//!
//! Model: `y_it = u_i + mu_leaf(it) + e_it`, `u_i ~ N(0, s2_u)`,
//! `e_it ~ N(0, s2_e)`. With `gamma = s2_u / s2_e` the leaf means and
//! `s2_e` profile out in closed form, leaving a scalar search over
//! `log gamma`. Unit blocks of the covariance are `I + gamma * 11'`, so every
//! quantity reduces to per-unit sufficient statistics.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{AmirlError, Result};
use crate::linalg::{cholesky, cholesky_logdet, cholesky_solve};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmmControls {
    /// Convergence tolerance on `log gamma`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LmmControls {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmmFit {
    pub leaf_means: Vec<f64>,
    /// BLUP per unit index; 0 for units without rows.
    pub unit_effects: Vec<f64>,
    pub residual_variance: f64,
    pub intercept_variance: f64,
    /// `intercept_variance / residual_variance`.
    pub variance_ratio: f64,
    pub restricted_loglik: f64,
    pub iterations: usize,
}

/// Search range for `log gamma`.
const LOG_RATIO_MIN: f64 = -20.0;
const LOG_RATIO_MAX: f64 = 20.0;
const GRID_POINTS: usize = 41;

struct UnitStats {
    n: f64,
    /// (leaf, count) pairs
    counts: Vec<(usize, f64)>,
}

struct Problem<'a> {
    leaf: &'a [usize],
    y: &'a [f64],
    unit: &'a [usize],
    n_leaves: usize,
    units: Vec<UnitStats>,
    /// Within-unit part of X'X (gamma-independent), P x P.
    a0: Array2<f64>,
    /// Within-unit part of X'y.
    b0: Array1<f64>,
    /// Per-unit mean response.
    ybar: Vec<f64>,
}

struct Eval {
    loglik: f64,
    mu: Array1<f64>,
}

impl<'a> Problem<'a> {
    fn new(leaf: &'a [usize], y: &'a [f64], unit: &'a [usize], n_leaves: usize, n_units: usize) -> Self {
        let mut sums = vec![0.0; n_units];
        let mut ns = vec![0.0; n_units];
        for r in 0..y.len() {
            ns[unit[r]] += 1.0;
            sums[unit[r]] += y[r];
        }
        let ybar: Vec<f64> = (0..n_units)
            .map(|i| if ns[i] > 0.0 { sums[i] / ns[i] } else { 0.0 })
            .collect();
        let mut a0 = Array2::<f64>::zeros((n_leaves, n_leaves));
        let mut b0 = Array1::<f64>::zeros(n_leaves);
        for r in 0..y.len() {
            a0[[leaf[r], leaf[r]]] += 1.0;
            b0[leaf[r]] += y[r] - ybar[unit[r]];
        }
        let mut units = Vec::with_capacity(n_units);
        let mut dense = vec![0.0; n_leaves];
        let mut touched: Vec<Vec<usize>> = vec![Vec::new(); n_units];
        for r in 0..y.len() {
            touched[unit[r]].push(r);
        }
        for i in 0..n_units {
            for &r in &touched[i] {
                dense[leaf[r]] += 1.0;
            }
            let mut pairs: Vec<(usize, f64)> = Vec::new();
            for &r in &touched[i] {
                let l = leaf[r];
                if dense[l] > 0.0 {
                    pairs.push((l, dense[l]));
                    dense[l] = 0.0;
                }
            }
            pairs.sort_by_key(|p| p.0);
            for &(l, c) in &pairs {
                for &(k, d) in &pairs {
                    a0[[l, k]] -= c * d / ns[i];
                }
            }
            units.push(UnitStats { n: ns[i], counts: pairs });
        }
        Self {
            leaf,
            y,
            unit,
            n_leaves,
            units,
            a0,
            b0,
            ybar,
        }
    }

    fn n_obs(&self) -> f64 {
        self.y.len() as f64
    }

    /// Restricted log-likelihood at `gamma`, with profiled leaf means and
    /// residual variance.
    fn evaluate(&self, gamma: f64) -> Result<Eval> {
        let p = self.n_leaves;
        let mut a = self.a0.clone();
        let mut b = self.b0.clone();
        let mut logdet_v = 0.0;
        for (i, u) in self.units.iter().enumerate() {
            if u.n == 0.0 {
                continue;
            }
            let w = 1.0 / (1.0 + u.n * gamma);
            logdet_v += (u.n * gamma).ln_1p();
            for &(l, c) in &u.counts {
                b[l] += w * c * self.ybar[i];
                for &(k, d) in &u.counts {
                    a[[l, k]] += w * c * d / u.n;
                }
            }
        }
        let chol = cholesky(&a).ok_or_else(|| {
            AmirlError::Numerical("leaf design is singular in the mixed model".into())
        })?;
        let mu = cholesky_solve(&chol, &b);
        let logdet_a = cholesky_logdet(&chol);

        // r'V^{-1}r = sum_i [ sum_t (r_it - rbar_i)^2 + n_i rbar_i^2 / (1 + n_i gamma) ]
        let n_units = self.units.len();
        let mut rsum = vec![0.0; n_units];
        for r in 0..self.y.len() {
            rsum[self.unit[r]] += self.y[r] - mu[self.leaf[r]];
        }
        let mut q = 0.0;
        for r in 0..self.y.len() {
            let i = self.unit[r];
            let rbar = rsum[i] / self.units[i].n;
            let d = self.y[r] - mu[self.leaf[r]] - rbar;
            q += d * d;
        }
        for (i, u) in self.units.iter().enumerate() {
            if u.n > 0.0 {
                let rbar = rsum[i] / u.n;
                q += u.n * rbar * rbar / (1.0 + u.n * gamma);
            }
        }
        let dof = self.n_obs() - p as f64;
        let sigma2 = q / dof;
        let loglik = -0.5
            * (dof * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0) + logdet_v + logdet_a);
        Ok(Eval { loglik, mu })
    }
}

/// Fits the random-intercept model on leaf indicators by REML.
///
/// `leaf[r]` is the leaf ordinal (`< n_leaves`) and `unit[r]` the unit index
/// (`< n_units`) of row `r`. Every leaf must own at least one row; units
/// without rows get a zero effect.
pub fn fit_lmm_on_leaves(
    leaf: &[usize],
    y: &[f64],
    unit: &[usize],
    n_leaves: usize,
    n_units: usize,
    controls: LmmControls,
) -> Result<LmmFit> {
    let n = y.len();
    if leaf.len() != n || unit.len() != n {
        return Err(AmirlError::DimensionMismatch(
            "leaf, unit and response lengths differ".into(),
        ));
    }
    if n == 0 || n_leaves == 0 {
        return Err(AmirlError::Input("mixed model needs data".into()));
    }
    if leaf.iter().any(|&l| l >= n_leaves) || unit.iter().any(|&u| u >= n_units) {
        return Err(AmirlError::Input("leaf or unit index out of range".into()));
    }
    let mut leaf_n = vec![0usize; n_leaves];
    for &l in leaf {
        leaf_n[l] += 1;
    }
    if leaf_n.iter().any(|&c| c == 0) {
        return Err(AmirlError::Input("every leaf needs at least one row".into()));
    }
    let prob = Problem::new(leaf, y, unit, n_leaves, n_units);

    // Leaf means at gamma = 0 are ordinary per-leaf averages.
    let at_zero = prob.evaluate(0.0)?;
    let resid_ss: f64 = (0..n)
        .map(|r| (y[r] - at_zero.mu[leaf[r]]).powi(2))
        .sum();
    let scale: f64 = y.iter().map(|v| v * v).sum::<f64>().max(1.0);
    if n <= n_leaves || resid_ss <= 1e-28 * scale {
        // Leaf means fit exactly (or no residual degrees of freedom): no
        // variance to apportion.
        return Ok(LmmFit {
            leaf_means: at_zero.mu.to_vec(),
            unit_effects: vec![0.0; n_units],
            residual_variance: 0.0,
            intercept_variance: 0.0,
            variance_ratio: 0.0,
            restricted_loglik: f64::INFINITY,
            iterations: 0,
        });
    }

    let step = (LOG_RATIO_MAX - LOG_RATIO_MIN) / (GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..GRID_POINTS).map(|k| LOG_RATIO_MIN + step * k as f64).collect();
    let values = grid
        .iter()
        .map(|&eta| prob.evaluate(eta.exp()).map(|e| e.loglik))
        .collect::<Result<Vec<_>>>()?;
    let best_k = (0..GRID_POINTS)
        .max_by(|&a, &b| values[a].total_cmp(&values[b]).then(b.cmp(&a)))
        .expect("grid is non-empty");

    let boundary_tol = 1e-9 * at_zero.loglik.abs().max(1.0);
    let (gamma, iterations) = if at_zero.loglik >= values[best_k] - boundary_tol {
        (0.0, GRID_POINTS)
    } else if best_k == 0 || best_k == GRID_POINTS - 1 {
        (grid[best_k].exp(), GRID_POINTS)
    } else {
        // golden-section refinement inside the bracketing grid cells
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut lo, mut hi) = (grid[best_k - 1], grid[best_k + 1]);
        let f = |eta: f64| prob.evaluate(eta.exp()).map(|e| e.loglik);
        let mut c = hi - inv_phi * (hi - lo);
        let mut d = lo + inv_phi * (hi - lo);
        let mut fc = f(c)?;
        let mut fd = f(d)?;
        let mut it = 0;
        while hi - lo > controls.tol {
            if it >= controls.max_iter {
                return Err(AmirlError::LmmNotConverged {
                    iterations: it,
                    last_ratio: ((lo + hi) / 2.0).exp(),
                });
            }
            if fc >= fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - inv_phi * (hi - lo);
                fc = f(c)?;
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + inv_phi * (hi - lo);
                fd = f(d)?;
            }
            it += 1;
        }
        let eta = (lo + hi) / 2.0;
        let eta = if f(eta)? >= values[best_k] { eta } else { grid[best_k] };
        (eta.exp(), GRID_POINTS + it)
    };

    let fit = prob.evaluate(gamma)?;
    let mut rsum = vec![0.0; n_units];
    let mut ssw = 0.0;
    for r in 0..n {
        rsum[unit[r]] += y[r] - fit.mu[leaf[r]];
    }
    let unit_effects: Vec<f64> = prob
        .units
        .iter()
        .enumerate()
        .map(|(i, u)| {
            if u.n == 0.0 {
                0.0
            } else {
                gamma / (1.0 + u.n * gamma) * rsum[i]
            }
        })
        .collect();
    for r in 0..n {
        let i = unit[r];
        let d = y[r] - fit.mu[leaf[r]] - rsum[i] / prob.units[i].n;
        ssw += d * d;
    }
    let q = ssw
        + prob
            .units
            .iter()
            .enumerate()
            .filter(|(_, u)| u.n > 0.0)
            .map(|(i, u)| {
                let rbar = rsum[i] / u.n;
                u.n * rbar * rbar / (1.0 + u.n * gamma)
            })
            .sum::<f64>();
    let residual_variance = q / (n - n_leaves) as f64;
    Ok(LmmFit {
        leaf_means: fit.mu.to_vec(),
        unit_effects,
        residual_variance,
        intercept_variance: gamma * residual_variance,
        variance_ratio: gamma,
        restricted_loglik: fit.loglik,
        iterations,
    })
}
