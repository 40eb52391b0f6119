//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use amirl_core::panel::{read_long_csv, LongTable};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Proximal gradient (ISTA) for `(1/n)||y - X theta||^2 + lambda ||theta||_1`,
/// run until the iterates stop moving.
pub fn ista_lasso(x: ArrayView2<f64>, y: ArrayView1<f64>, lambda: f64) -> Vec<f64> {
    let n = x.nrows() as f64;
    let p = x.ncols();
    let g = x.t().dot(&x) * (2.0 / n);
    let xty = x.t().dot(&y) * (2.0 / n);
    // largest eigenvalue of the Hessian by power iteration
    let mut v = Array1::<f64>::ones(p);
    let mut l = 0.0;
    for _ in 0..500 {
        let w = g.dot(&v);
        l = w.dot(&w).sqrt();
        v = w / l;
    }
    let step = 1.0 / (l * 1.01);
    let mut theta = Array1::<f64>::zeros(p);
    for _ in 0..1_000_000 {
        let grad = g.dot(&theta) - &xty;
        let z = &theta - &(grad * step);
        let next = z.mapv(|u| u.signum() * (u.abs() - lambda * step).max(0.0));
        let change = (&next - &theta).iter().fold(0.0f64, |a, d| a.max(d.abs()));
        theta = next;
        if change < 1e-15 {
            break;
        }
    }
    theta.to_vec()
}

/// Largest violation of the lasso optimality conditions.
pub fn kkt_violation(x: ArrayView2<f64>, y: ArrayView1<f64>, theta: &[f64], lambda: f64) -> f64 {
    let n = x.nrows() as f64;
    let r = &y - &x.dot(&Array1::from(theta.to_vec()));
    let grad = x.t().dot(&r) * (2.0 / n);
    let mut worst = 0.0f64;
    for (j, &t) in theta.iter().enumerate() {
        let v = if t != 0.0 {
            (grad[j] - lambda * t.signum()).abs()
        } else {
            (grad[j].abs() - lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

/// Random within-transformed design: `units` blocks of `t` rows, `p`
/// covariates, a sparse signal plus noise.
pub fn demeaned_problem(seed: u64, units: usize, t: usize, p: usize) -> (Array2<f64>, Array1<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = units * t;
    let mut x = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
    let beta: Vec<f64> = (0..p).map(|j| if j % 3 == 0 { 1.0 - 0.1 * j as f64 } else { 0.0 }).collect();
    let mut y = Array1::from_shape_fn(n, |r| {
        (0..p).map(|j| x[[r, j]] * beta[j]).sum::<f64>() + rng.sample::<f64, _>(StandardNormal)
    });
    for i in 0..units {
        let rows = i * t..(i + 1) * t;
        let ym = y.slice(ndarray::s![rows.clone()]).mean().unwrap();
        y.slice_mut(ndarray::s![rows.clone()]).mapv_inplace(|v| v - ym);
        for j in 0..p {
            let xm = x.slice(ndarray::s![rows.clone(), j]).mean().unwrap();
            x.slice_mut(ndarray::s![rows.clone(), j]).mapv_inplace(|v| v - xm);
        }
    }
    (x, y)
}

/// Units available in exactly the years `[start, end]`, with how many units
/// follow each pattern. Built so that the windows ending in 2014 give
/// 213 x 6 = 1278 and 321 x 4 = 1284 observations.
pub const AVAILABILITY_PATTERNS: [(i64, i64, usize); 21] = [
    (2009, 2014, 213),
    (2009, 2013, 19),
    (2010, 2014, 15),
    (2011, 2014, 93),
    (2012, 2014, 75),
    (2013, 2014, 125),
    (2014, 2014, 150),
    (2010, 2013, 6),
    (2011, 2013, 21),
    (2012, 2013, 19),
    (2013, 2013, 31),
    (2012, 2012, 59),
    (2011, 2011, 33),
    (2011, 2012, 41),
    (2010, 2010, 1),
    (2010, 2011, 23),
    (2010, 2012, 12),
    (2009, 2009, 12),
    (2009, 2010, 10),
    (2009, 2011, 37),
    (2009, 2012, 39),
];

/// Long CSV with one unit per pattern entry. Years outside a unit's pattern
/// either have no rows or carry only zeros and blanks, which the
/// availability rule must treat as absent.
pub fn availability_fixture_csv() -> String {
    let mut out = String::from("unit,year,variable,value\n");
    let mut id = 0;
    for &(start, end, count) in &AVAILABILITY_PATTERNS {
        for _ in 0..count {
            id += 1;
            for year in 2009..=2014 {
                if (start..=end).contains(&year) {
                    out.push_str(&format!("m{id:04},{year},gross_loan_portfolio,{}\n", 1000 + id));
                    out.push_str(&format!("m{id:04},{year},borrowers,\n"));
                } else if id % 2 == 0 {
                    out.push_str(&format!("m{id:04},{year},gross_loan_portfolio,0\n"));
                    out.push_str(&format!("m{id:04},{year},borrowers,\n"));
                }
            }
        }
    }
    out
}

pub fn availability_fixture() -> LongTable {
    read_long_csv(availability_fixture_csv().as_bytes()).expect("fixture parses")
}

/// Step function of x0 plus noise whose unit means are exactly zero, so the
/// data carry no between-unit variation at all.
pub fn no_unit_variation(seed: u64, units: usize, t: usize) -> (Array2<f64>, Array1<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = units * t;
    let x = Array2::from_shape_fn((n, 3), |_| rng.sample::<f64, _>(StandardNormal));
    let mut e: Vec<f64> = (0..n).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
    for i in 0..units {
        let m = e[i * t..(i + 1) * t].iter().sum::<f64>() / t as f64;
        for v in &mut e[i * t..(i + 1) * t] {
            *v -= m;
        }
    }
    let y = Array1::from_shape_fn(n, |r| if x[[r, 0]] > 0.0 { 2.0 } else { -1.0 } + e[r]);
    (x, y, (0..n).map(|r| r / t).collect())
}

/// Step function plus unit intercepts plus noise.
pub fn with_unit_effects(seed: u64, units: usize, t: usize) -> (Array2<f64>, Array1<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = units * t;
    let u: Vec<f64> = (0..units).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let x = Array2::from_shape_fn((n, 3), |_| rng.sample::<f64, _>(StandardNormal));
    let y = Array1::from_shape_fn(n, |r| {
        u[r / t] + if x[[r, 0]] > 0.0 { 1.5 } else { -1.5 } + 0.5 * rng.sample::<f64, _>(StandardNormal)
    });
    (x, y, (0..n).map(|r| r / t).collect())
}
