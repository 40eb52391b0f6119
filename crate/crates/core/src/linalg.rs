//! Small dense linear-algebra helpers: least squares by modified Gram-Schmidt
//! with rank detection, and a Cholesky factorisation for the mixed-model
//! normal equations.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Relative residual norm below which a column counts as collinear with the
/// columns already accepted.
pub const COLLINEAR_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct LeastSquares {
    /// Coefficients for the requested columns, in request order. Dropped
    /// columns carry 0.
    pub coefficients: Vec<f64>,
    /// Positions (into the requested column list) that were dropped as
    /// collinear with earlier columns.
    pub dropped: Vec<usize>,
}

/// Ordinary least squares of `y` on the listed columns of `x` (no intercept).
///
/// Columns are orthogonalised in the order given; a column whose residual
/// norm after projection is below `COLLINEAR_TOL` times its own norm is
/// dropped, so later-indexed members of a collinear group go first.
pub fn least_squares(x: ArrayView2<f64>, y: ArrayView1<f64>, cols: &[usize]) -> LeastSquares {
    let n = x.nrows();
    let mut q: Vec<Array1<f64>> = Vec::with_capacity(cols.len());
    let mut r: Vec<Vec<f64>> = Vec::with_capacity(cols.len());
    let mut kept_pos: Vec<usize> = Vec::with_capacity(cols.len());
    let mut dropped = Vec::new();

    for (pos, &c) in cols.iter().enumerate() {
        let col = x.column(c);
        let norm0 = col.dot(&col).sqrt();
        let mut v = col.to_owned();
        let mut coeffs = vec![0.0; q.len()];
        // two passes of MGS for numerical orthogonality
        for _ in 0..2 {
            for (k, qk) in q.iter().enumerate() {
                let proj = qk.dot(&v);
                coeffs[k] += proj;
                v.scaled_add(-proj, qk);
            }
        }
        let nv = v.dot(&v).sqrt();
        if norm0 == 0.0 || nv <= COLLINEAR_TOL * norm0 || n == 0 {
            dropped.push(pos);
            continue;
        }
        v /= nv;
        coeffs.push(nv);
        q.push(v);
        r.push(coeffs);
        kept_pos.push(pos);
    }

    // R is stored column-wise: r[j][k] = R[k, j] for k <= j.
    let qty: Vec<f64> = q.iter().map(|qk| qk.dot(&y)).collect();
    let k = q.len();
    let mut beta = vec![0.0; k];
    for j in (0..k).rev() {
        let mut s = qty[j];
        for l in (j + 1)..k {
            s -= r[l][j] * beta[l];
        }
        beta[j] = s / r[j][j];
    }

    let mut coefficients = vec![0.0; cols.len()];
    for (idx, &pos) in kept_pos.iter().enumerate() {
        coefficients[pos] = beta[idx];
    }
    LeastSquares {
        coefficients,
        dropped,
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// Solves `L L' x = b` given the Cholesky factor.
pub fn cholesky_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut z = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * z[k];
        }
        z[i] = s / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

pub fn cholesky_logdet(l: &Array2<f64>) -> f64 {
    2.0 * l.diag().iter().map(|d| d.ln()).sum::<f64>()
}

/// Residual sum of squares of `y - X beta`, skipping zero coefficients.
pub fn rss(x: ArrayView2<f64>, y: ArrayView1<f64>, beta: &[f64]) -> f64 {
    let nz: Vec<(usize, f64)> = beta
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, b)| *b != 0.0)
        .collect();
    let mut total = 0.0;
    for (i, row) in x.outer_iter().enumerate() {
        let mut fit = 0.0;
        for &(j, b) in &nz {
            fit += row[j] * b;
        }
        let r = y[i] - fit;
        total += r * r;
    }
    total
}
