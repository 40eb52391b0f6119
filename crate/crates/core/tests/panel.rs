mod common;

use std::ops::Range;

use amirl_core::panel::{
    extract_window, read_long_csv, read_wide_csv, recover_fixed_effects, select_balanced_window,
    standardize, within_transform, write_wide_csv, Availability, LongTable,
};
use common::{availability_fixture, AVAILABILITY_PATTERNS};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn find(ranked: &[amirl_core::panel::WindowCandidate], s: i64, e: i64) -> usize {
    ranked
        .iter()
        .find(|w| w.start_year == s && w.end_year == e)
        .map(|w| w.panel_size)
        .expect("window present")
}

#[test]
fn fixture_reproduces_window_sizes() {
    let table = availability_fixture();
    let ranked = select_balanced_window(&table, 1, 0.01, &Availability::AnyNonZero).unwrap();
    assert_eq!(find(&ranked, 2009, 2014), 1278);
    assert_eq!(find(&ranked, 2011, 2014), 1284);
    assert_eq!((ranked[0].start_year, ranked[0].end_year), (2009, 2014));
    // without slack the raw maximiser wins
    let strict = select_balanced_window(&table, 1, 0.0, &Availability::AnyNonZero).unwrap();
    assert_eq!(strict[0].panel_size, strict.iter().map(|w| w.panel_size).max().unwrap());
    assert_ne!((strict[0].start_year, strict[0].end_year), (2009, 2014));
}

#[test]
fn window_counts_match_pattern_tally() {
    let table = availability_fixture();
    let ranked = select_balanced_window(&table, 1, 0.01, &Availability::AnyNonZero).unwrap();
    for w in &ranked {
        let units: usize = AVAILABILITY_PATTERNS
            .iter()
            .filter(|(s, e, _)| *s <= w.start_year && w.end_year <= *e)
            .map(|p| p.2)
            .sum();
        assert_eq!(w.n_units, units, "window {}-{}", w.start_year, w.end_year);
    }
}

#[test]
fn min_length_is_respected_and_extraction_is_balanced() {
    let table = availability_fixture();
    let ranked = select_balanced_window(&table, 6, 0.01, &Availability::AnyNonZero).unwrap();
    assert!(ranked.iter().all(|w| w.length() >= 6));
    let panel = extract_window(&table, &ranked[0], &Availability::AnyNonZero).unwrap();
    assert!(panel.is_balanced());
    assert_eq!(panel.n_rows(), 1278);
}

fn naive_counts(avail: &[Vec<bool>], years: &[i64]) -> Vec<(i64, i64, usize)> {
    let mut out = Vec::new();
    for s in 0..years.len() {
        for e in s..years.len() {
            let n = avail.iter().filter(|a| (s..=e).all(|y| a[y])).count();
            if n > 0 {
                out.push((years[s], years[e], n));
            }
        }
    }
    out
}

fn table_from(avail: &[Vec<bool>]) -> LongTable {
    let mut csv = String::from("unit,year,variable,value\n");
    for (u, row) in avail.iter().enumerate() {
        for (y, a) in row.iter().enumerate() {
            let v = if *a { "2.5" } else { "0" };
            csv.push_str(&format!("u{u},{},v,{v}\n", 2000 + y));
        }
    }
    read_long_csv(csv.as_bytes()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn window_enumeration_matches_brute_force(avail in prop::collection::vec(prop::collection::vec(any::<bool>(), 5), 1..12)) {
        prop_assume!(avail.iter().any(|r| r.iter().any(|a| *a)));
        let table = table_from(&avail);
        let years: Vec<i64> = (2000..2005).collect();
        let ranked = select_balanced_window(&table, 1, 0.0, &Availability::AnyNonZero).unwrap();
        let mut got: Vec<(i64, i64, usize)> = ranked.iter().map(|w| (w.start_year, w.end_year, w.n_units)).collect();
        got.sort();
        let mut want = naive_counts(&avail, &years);
        want.sort();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn within_transform_zeroes_unit_means(t in 2usize..6, n in 1usize..6, seed in 0u64..1000) {
        let rows = n * t;
        let vals = Array2::from_shape_fn((rows, 3), |(r, j)| ((r * 31 + j * 17 + seed as usize) % 13) as f64 * 0.7 - 3.0);
        let blocks: Vec<Range<usize>> = (0..n).map(|i| i * t..(i + 1) * t).collect();
        let d = within_transform(vals.view(), &blocks, &[]).unwrap();
        for b in &blocks {
            for j in 0..3 {
                let m: f64 = d.values.slice(ndarray::s![b.clone(), j]).sum();
                prop_assert!(m.abs() < 1e-10);
            }
        }
        // adding a unit constant does not change the result
        let mut shifted = vals.clone();
        for (i, b) in blocks.iter().enumerate() {
            shifted.slice_mut(ndarray::s![b.clone(), ..]).mapv_inplace(|v| v + i as f64 * 10.0);
        }
        let d2 = within_transform(shifted.view(), &blocks, &[]).unwrap();
        for (a, b) in d.values.iter().zip(d2.values.iter()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        // idempotent
        let d3 = within_transform(d.values.view(), &blocks, &[]).unwrap();
        for (a, b) in d.values.iter().zip(d3.values.iter()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn standardized_columns_have_unit_sd(seed in 0u64..1000, n in 3usize..40) {
        let vals = Array2::from_shape_fn((n, 2), |(r, j)| ((r as u64 * 7919 + j as u64 * 104729 + seed) % 101) as f64);
        prop_assume!((0..2).all(|j| vals.column(j).iter().any(|v| *v != vals[[0, j]])));
        let s = standardize(vals.view(), &[]).unwrap();
        for j in 0..2 {
            let c = s.values.column(j);
            let mean = c.sum() / n as f64;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            prop_assert!(mean.abs() < 1e-12);
            prop_assert!((var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_effects_reconstruct_levels(seed in 0u64..1000) {
        let (n, t) = (4, 3);
        let x = Array2::from_shape_fn((n * t, 2), |(r, j)| ((r * 13 + j * 5 + seed as usize) % 9) as f64);
        let alpha = [1.0, -2.0, 0.5, 3.0];
        let beta = [0.7, -1.1];
        let y = Array1::from_shape_fn(n * t, |r| alpha[r / t] + beta[0] * x[[r, 0]] + beta[1] * x[[r, 1]]);
        let blocks: Vec<Range<usize>> = (0..n).map(|i| i * t..(i + 1) * t).collect();
        let a = recover_fixed_effects(&beta, y.view(), x.view(), &blocks).unwrap();
        for i in 0..n {
            prop_assert!((a[i] - alpha[i]).abs() < 1e-10);
        }
    }
}

#[test]
fn wide_csv_round_trip() {
    let src = "unit,year,y,x\na,2001,1.5,2\na,2002,,3\nb,2001,2.25,\nb,2002,4,5\n";
    let panel = read_wide_csv(src.as_bytes()).unwrap();
    let mut out = Vec::new();
    write_wide_csv(&mut out, &panel, None, None).unwrap();
    let back = read_wide_csv(out.as_slice()).unwrap();
    assert_eq!(back.n_missing(), 2);
    assert_eq!(back.values().iter().filter(|v| !v.is_nan()).count(), 6);
    assert_eq!(String::from_utf8(out).unwrap(), src);
}
