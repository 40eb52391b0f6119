//! L1-penalised least squares on standardised, demeaned data.
//!
//! The objective is `(1/n)||y - X theta||^2 + lambda ||theta||_1` with no
//! intercept (demeaning removes it). Fits use cyclic coordinate descent on
//! the Gram matrix and warm starts along a decreasing penalty grid.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{AmirlError, Result};
use crate::linalg::{least_squares, rss};

/// Coordinate descent stops once no coefficient moves by more than this.
pub const CD_TOL: f64 = 1e-7;
pub const CD_MAX_SWEEPS: usize = 100_000;

/// Relative residual sum of squares (against `y'y`) at or below which a fit
/// counts as perfect.
pub const DEGENERATE_RSS: f64 = 1e-20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoSolution {
    pub lambda: f64,
    pub coefficients: Vec<f64>,
    pub active_set: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
}

/// Sufficient statistics `X'X / n` and `X'y / n` shared by every fit on the
/// same data.
#[derive(Debug, Clone)]
pub struct Gram {
    g: Array2<f64>,
    xty: Array1<f64>,
}

impl Gram {
    pub fn new(x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(AmirlError::DimensionMismatch(format!(
                "{} rows in X, {} in y",
                x.nrows(),
                y.len()
            )));
        }
        if x.nrows() == 0 {
            return Err(AmirlError::NoData);
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(AmirlError::Input("lasso inputs must be finite".into()));
        }
        let n = x.nrows();
        Ok(Self {
            g: x.t().dot(&x) / n as f64,
            xty: x.t().dot(&y) / n as f64,
        })
    }

    pub fn n_features(&self) -> usize {
        self.xty.len()
    }

    /// Smallest penalty with an all-zero solution: `(2/n) max_j |X_j'y|`.
    pub fn lambda_max(&self) -> f64 {
        2.0 * self.xty.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Coordinate descent from `start`. Returns coefficients and sweeps.
    pub fn solve(&self, lambda: f64, start: &[f64]) -> Result<(Vec<f64>, usize)> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(AmirlError::Config(format!("penalty must be non-negative, got {lambda}")));
        }
        let p = self.n_features();
        let mut theta = start.to_vec();
        // q = G theta, kept in sync with theta
        let mut q = self.g.dot(&Array1::from(theta.clone()));
        let half = lambda / 2.0;
        let mut last_change = f64::INFINITY;
        for sweep in 1..=CD_MAX_SWEEPS {
            let mut max_change = 0.0f64;
            for j in 0..p {
                let gjj = self.g[[j, j]];
                let old = theta[j];
                let new = if gjj > 0.0 {
                    let z = self.xty[j] - (q[j] - gjj * old);
                    soft_threshold(z, half) / gjj
                } else {
                    0.0
                };
                let delta = new - old;
                if delta != 0.0 {
                    theta[j] = new;
                    for k in 0..p {
                        q[k] += self.g[[k, j]] * delta;
                    }
                    max_change = max_change.max(delta.abs());
                }
            }
            last_change = max_change;
            if max_change < CD_TOL {
                return Ok((theta, sweep));
            }
        }
        Err(AmirlError::LassoNotConverged {
            sweeps: CD_MAX_SWEEPS,
            last_change,
            coefficients: theta,
        })
    }
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

fn solution(x: ArrayView2<f64>, y: ArrayView1<f64>, lambda: f64, coefficients: Vec<f64>, iterations: usize) -> LassoSolution {
    let n = x.nrows() as f64;
    let l1: f64 = coefficients.iter().map(|b| b.abs()).sum();
    let objective = rss(x, y, &coefficients) / n + lambda * l1;
    let active_set = coefficients
        .iter()
        .enumerate()
        .filter(|(_, b)| **b != 0.0)
        .map(|(j, _)| j)
        .collect();
    LassoSolution {
        lambda,
        coefficients,
        active_set,
        objective,
        iterations,
    }
}

/// `(2/n) max_j |X_j'y|`; zero when `y` is orthogonal to every column.
pub fn lambda_max(x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<f64> {
    Ok(Gram::new(x, y)?.lambda_max())
}

pub fn lasso_fit(x: ArrayView2<f64>, y: ArrayView1<f64>, lambda: f64) -> Result<LassoSolution> {
    let gram = Gram::new(x, y)?;
    let (theta, it) = gram.solve(lambda, &vec![0.0; x.ncols()])?;
    Ok(solution(x, y, lambda, theta, it))
}

/// Fits every grid value in order, warm-starting each from the previous.
pub fn lasso_path(x: ArrayView2<f64>, y: ArrayView1<f64>, grid: &[f64]) -> Result<Vec<LassoSolution>> {
    let gram = Gram::new(x, y)?;
    let mut theta = vec![0.0; x.ncols()];
    let mut out = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let (next, it) = gram.solve(lambda, &theta)?;
        theta.clone_from(&next);
        out.push(solution(x, y, lambda, next, it));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub values: Vec<f64>,
    pub lambda_max: f64,
    pub delta: f64,
}

/// `exp` of `k` equally spaced points from `log lambda_max` down to
/// `log(delta * lambda_max)`.
pub fn build_lambda_grid(lambda_max: f64, k: usize, delta: f64) -> Result<LambdaGrid> {
    if !(lambda_max > 0.0) || !lambda_max.is_finite() {
        return Err(AmirlError::Numerical(format!(
            "penalty grid needs a positive maximum, got {lambda_max}"
        )));
    }
    if k == 0 || !(delta > 0.0 && delta <= 1.0) {
        return Err(AmirlError::Config(format!(
            "grid needs K >= 1 and delta in (0, 1], got K={k}, delta={delta}"
        )));
    }
    let hi = lambda_max.ln();
    let lo = (delta * lambda_max).ln();
    let values = if k == 1 {
        vec![lambda_max]
    } else {
        (0..k)
            .map(|i| {
                if i == 0 {
                    lambda_max
                } else if i == k - 1 {
                    delta * lambda_max
                } else {
                    (hi + (lo - hi) * i as f64 / (k - 1) as f64).exp()
                }
            })
            .collect()
    };
    Ok(LambdaGrid {
        values,
        lambda_max,
        delta,
    })
}

/// Largest of the per-sample penalty maxima.
pub fn pooled_lambda_max<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    values.into_iter().fold(0.0f64, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostOls {
    /// Length-p, zero off the selected columns.
    pub coefficients: Vec<f64>,
    /// Selected columns dropped as collinear with earlier ones.
    pub dropped: Vec<usize>,
}

/// Least squares on the active columns; everything else stays zero.
pub fn post_lasso_ols(active_set: &[usize], x: ArrayView2<f64>, y: ArrayView1<f64>) -> PostOls {
    let mut coefficients = vec![0.0; x.ncols()];
    if active_set.is_empty() {
        return PostOls {
            coefficients,
            dropped: Vec::new(),
        };
    }
    let ls = least_squares(x, y, active_set);
    for (pos, &j) in active_set.iter().enumerate() {
        coefficients[j] = ls.coefficients[pos];
    }
    PostOls {
        coefficients,
        dropped: ls.dropped.iter().map(|&pos| active_set[pos]).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionKind {
    Bic,
    Aic,
    Cp,
}

impl CriterionKind {
    pub const ALL: [CriterionKind; 3] = [CriterionKind::Bic, CriterionKind::Aic, CriterionKind::Cp];

    pub fn name(self) -> &'static str {
        match self {
            CriterionKind::Bic => "bic",
            CriterionKind::Aic => "aic",
            CriterionKind::Cp => "cp",
        }
    }
}

impl std::str::FromStr for CriterionKind {
    type Err = AmirlError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bic" => Ok(CriterionKind::Bic),
            "aic" => Ok(CriterionKind::Aic),
            "cp" => Ok(CriterionKind::Cp),
            other => Err(AmirlError::Config(format!("unknown criterion `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionValue {
    pub kind: CriterionKind,
    pub value: f64,
    pub k_used: usize,
    pub sigma2_hat: Option<f64>,
}

/// BIC = n log(RSS/n) + log(n)(N+K), AIC = n log(RSS/n) + 2(N+K),
/// Cp = RSS/sigma2 - n + 2K, with `n` observations and `N` fixed effects.
pub fn information_criterion(
    rss: f64,
    n_obs: usize,
    n_fixed: usize,
    k_used: usize,
    kind: CriterionKind,
    sigma2_hat: Option<f64>,
) -> Result<CriterionValue> {
    if n_obs == 0 {
        return Err(AmirlError::NoData);
    }
    if !rss.is_finite() || rss < 0.0 {
        return Err(AmirlError::Numerical(format!("invalid residual sum of squares {rss}")));
    }
    let n = n_obs as f64;
    let params = (n_fixed + k_used) as f64;
    let value = match kind {
        CriterionKind::Bic | CriterionKind::Aic => {
            if rss == 0.0 {
                return Err(AmirlError::DegenerateFit);
            }
            let pen = if kind == CriterionKind::Bic { n.ln() } else { 2.0 };
            n * (rss / n).ln() + pen * params
        }
        CriterionKind::Cp => {
            let s2 = sigma2_hat.ok_or_else(|| {
                AmirlError::Config("Cp needs the full-model variance estimate".into())
            })?;
            if !(s2 > 0.0) || !s2.is_finite() {
                return Err(AmirlError::Numerical(format!("full-model variance must be positive, got {s2}")));
            }
            rss / s2 - n + 2.0 * k_used as f64
        }
    };
    Ok(CriterionValue {
        kind,
        value,
        k_used,
        sigma2_hat: if kind == CriterionKind::Cp { sigma2_hat } else { None },
    })
}

/// Residual variance of the least-squares fit on all columns, with
/// denominator `n - n_fixed - p`.
pub fn full_model_sigma2(x: ArrayView2<f64>, y: ArrayView1<f64>, n_fixed: usize) -> Result<f64> {
    let (n, p) = x.dim();
    let dof = n as i64 - n_fixed as i64 - p as i64;
    if dof <= 0 {
        return Err(AmirlError::Config(format!(
            "Cp needs more observations ({n}) than fixed effects plus covariates ({})",
            n_fixed + p
        )));
    }
    let cols: Vec<usize> = (0..p).collect();
    let ls = least_squares(x, y, &cols);
    let s2 = rss(x, y, &ls.coefficients) / dof as f64;
    if !(s2 > 0.0) {
        return Err(AmirlError::DegenerateFit);
    }
    Ok(s2)
}

/// Which fit a grid point is scored on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreFit {
    /// Least-squares refit on the active set.
    #[default]
    PostOls,
    /// The penalised coefficients themselves.
    Lasso,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionSpec {
    pub kind: CriterionKind,
    /// Fixed effects counted in the criterion penalty (N demeaned, 1 pooled).
    pub n_fixed: usize,
    /// Required for Cp.
    pub sigma2_hat: Option<f64>,
    pub score_fit: ScoreFit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub lambda: f64,
    pub solution: LassoSolution,
    pub post: PostOls,
    /// Criterion per grid point; `-inf` marks a perfect fit.
    pub scores: Vec<f64>,
}

/// Fits the lasso along `grid` and returns the criterion minimiser. Ties go
/// to the larger penalty; perfect fits outrank everything else.
pub fn select_lambda_oc(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    grid: &[f64],
    spec: SelectionSpec,
) -> Result<Selection> {
    if grid.is_empty() {
        return Err(AmirlError::Config("empty penalty grid".into()));
    }
    let path = lasso_path(x, y, grid)?;
    let tss = y.dot(&y);
    let mut scores = Vec::with_capacity(path.len());
    let mut posts = Vec::with_capacity(path.len());
    let mut all_degenerate = true;
    for (i, sol) in path.iter().enumerate() {
        // neighbouring penalties usually share an active set
        let post = match posts.last() {
            Some(prev) if path[i - 1].active_set == sol.active_set => PostOls::clone(prev),
            _ => post_lasso_ols(&sol.active_set, x, y),
        };
        let beta = match spec.score_fit {
            ScoreFit::PostOls => &post.coefficients,
            ScoreFit::Lasso => &sol.coefficients,
        };
        let k_used = beta.iter().filter(|b| **b != 0.0).count();
        let r = rss(x, y, beta);
        let degenerate = r <= DEGENERATE_RSS * tss;
        let score = if degenerate && spec.kind != CriterionKind::Cp {
            f64::NEG_INFINITY
        } else {
            all_degenerate = false;
            information_criterion(r, x.nrows(), spec.n_fixed, k_used, spec.kind, spec.sigma2_hat)?.value
        };
        scores.push(score);
        posts.push(post);
    }
    if all_degenerate && spec.kind != CriterionKind::Cp && path.len() > 1 {
        return Err(AmirlError::AllFitsDegenerate);
    }
    // strict improvement only, so the first (largest) penalty wins ties
    let mut best = 0;
    for i in 1..scores.len() {
        if scores[i] < scores[best] {
            best = i;
        }
    }
    let solution = path.into_iter().nth(best).expect("index within path");
    Ok(Selection {
        index: best,
        lambda: grid[best],
        solution,
        post: posts.swap_remove(best),
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn criteria_by_hand() {
        let bic = information_criterion(12.0, 12, 2, 1, CriterionKind::Bic, None).unwrap();
        assert!((bic.value - 3.0 * 12f64.ln()).abs() < 1e-12);
        let aic = information_criterion(12.0, 12, 2, 1, CriterionKind::Aic, None).unwrap();
        assert!((aic.value - 6.0).abs() < 1e-12);
        let cp = information_criterion(12.0, 12, 2, 1, CriterionKind::Cp, Some(1.0)).unwrap();
        assert!((cp.value - 2.0).abs() < 1e-12);
        assert!(matches!(
            information_criterion(0.0, 12, 2, 1, CriterionKind::Bic, None),
            Err(AmirlError::DegenerateFit)
        ));
        assert!(information_criterion(1.0, 12, 2, 1, CriterionKind::Cp, None).is_err());
    }

    #[test]
    fn grid_endpoints_and_ratio() {
        let g = build_lambda_grid(1.0, 3, 0.01).unwrap();
        assert_eq!(g.values[0], 1.0);
        assert!((g.values[1] - 0.1).abs() < 1e-12);
        assert_eq!(g.values[2], 0.01);
        let g = build_lambda_grid(3.7, 100, 0.001).unwrap();
        let r = 0.001f64.powf(1.0 / 99.0);
        for w in g.values.windows(2) {
            assert!((w[1] / w[0] - r).abs() < 1e-12);
        }
        assert!(build_lambda_grid(0.0, 10, 0.001).is_err());
    }

    #[test]
    fn lambda_max_of_single_column() {
        let x = array![[-1.0], [0.0], [1.0]];
        let y = x.column(0).to_owned();
        let lm = lambda_max(x.view(), y.view()).unwrap();
        assert!((lm - 2.0 * 2.0 / 3.0).abs() < 1e-15);
        let sol = lasso_fit(x.view(), y.view(), lm).unwrap();
        assert!(sol.active_set.is_empty());
        let sol = lasso_fit(x.view(), y.view(), 0.99 * lm).unwrap();
        assert_eq!(sol.active_set, vec![0]);
        let orth = array![1.0, -2.0, 1.0];
        assert_eq!(lambda_max(x.view(), orth.view()).unwrap(), 0.0);
    }

    #[test]
    fn empty_active_set_gives_zero_refit() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let y = array![1.0, 2.0];
        assert_eq!(post_lasso_ols(&[], x.view(), y.view()).coefficients, vec![0.0, 0.0]);
    }

    #[test]
    fn collinear_active_columns_are_dropped() {
        let x = array![[1.0, 2.0, 0.0], [2.0, 4.0, 1.0], [3.0, 6.0, 0.0], [4.0, 8.0, 1.0]];
        let y = array![1.0, 2.0, 3.0, 4.0];
        let post = post_lasso_ols(&[0, 1, 2], x.view(), y.view());
        assert_eq!(post.dropped, vec![1]);
        assert_eq!(post.coefficients[1], 0.0);
        assert!((post.coefficients[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_point_grid_returns_it() {
        let x = array![[1.0, 0.5], [-1.0, 0.2], [0.5, -0.3], [-0.5, -0.4]];
        let y = array![1.0, -0.8, 0.3, -0.5];
        let spec = SelectionSpec {
            kind: CriterionKind::Bic,
            n_fixed: 1,
            sigma2_hat: None,
            score_fit: ScoreFit::PostOls,
        };
        let s = select_lambda_oc(x.view(), y.view(), &[0.1], spec).unwrap();
        assert_eq!(s.lambda, 0.1);
        assert_eq!(s.index, 0);
    }
}
