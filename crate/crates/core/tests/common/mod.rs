//! Independent oracles shared by the solver tests and the acceptance suite.
#![allow(dead_code)]

use dyntraj::poly::COEFFS;
use dyntraj::{Vec3, WaypointConstraint};
use nalgebra::{DMatrix, DVector};

/// `d^k/dτ^k τ^i` at `tau`.
pub fn monomial_derivative(i: usize, k: usize, tau: f64) -> f64 {
    if k > i {
        return 0.0;
    }
    let factor: f64 = ((i - k + 1)..=i).map(|x| x as f64).product();
    factor * tau.powi((i - k) as i32)
}

/// Exact integral over `[0, dur]` of the squared fourth derivative.
pub fn snap_cost_1d(c: &[f64], dur: f64) -> f64 {
    let mut cost = 0.0;
    for i in 4..COEFFS {
        for j in 4..COEFFS {
            let fi: f64 = ((i - 3)..=i).map(|x| x as f64).product();
            let fj: f64 = ((j - 3)..=j).map(|x| x as f64).product();
            let p = (i + j - 7) as i32;
            cost += c[i] * c[j] * fi * fj * dur.powi(p) / p as f64;
        }
    }
    cost
}

pub fn oracle_cost(coeffs: &[[[f64; COEFFS]; 3]], knots: &[f64]) -> f64 {
    coeffs
        .iter()
        .zip(knots.windows(2))
        .map(|(seg, w)| seg.iter().map(|axis| snap_cost_1d(axis, w[1] - w[0])).sum::<f64>())
        .sum()
}

pub fn rest(x: f64, y: f64, z: f64) -> WaypointConstraint {
    WaypointConstraint::position(Vec3::new(x, y, z))
}

/// Rows constrain the stacked per-segment coefficients of one axis:
/// endpoint derivatives 0..3, both-sided positions at interior knots and
/// continuity of derivatives 1..4 there.
pub fn constraint_matrix(knots: &[f64]) -> DMatrix<f64> {
    let segs = knots.len() - 1;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let row = |seg: usize, tau: f64, k: usize, sign: f64, out: &mut Vec<f64>| {
        for i in 0..COEFFS {
            out[seg * COEFFS + i] += sign * monomial_derivative(i, k, tau);
        }
    };
    let dur = |s: usize| knots[s + 1] - knots[s];
    for k in 0..4 {
        let mut r = vec![0.0; segs * COEFFS];
        row(0, 0.0, k, 1.0, &mut r);
        rows.push(r);
        let mut r = vec![0.0; segs * COEFFS];
        row(segs - 1, dur(segs - 1), k, 1.0, &mut r);
        rows.push(r);
    }
    for s in 0..segs - 1 {
        let mut r = vec![0.0; segs * COEFFS];
        row(s, dur(s), 0, 1.0, &mut r);
        rows.push(r);
        let mut r = vec![0.0; segs * COEFFS];
        row(s + 1, 0.0, 0, 1.0, &mut r);
        rows.push(r);
        for k in 1..=4 {
            let mut r = vec![0.0; segs * COEFFS];
            row(s, dur(s), k, 1.0, &mut r);
            row(s + 1, 0.0, k, -1.0, &mut r);
            rows.push(r);
        }
    }
    DMatrix::from_fn(rows.len(), segs * COEFFS, |r, c| rows[r][c])
}

pub fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    // Pad to square so the SVD returns the full right singular basis.
    let n = a.ncols();
    let mut padded = DMatrix::zeros(n.max(a.nrows()), n);
    padded.rows_mut(0, a.nrows()).copy_from(a);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.unwrap();
    let scale = svd.singular_values.max();
    let cols: Vec<DVector<f64>> = (0..n)
        .filter(|&i| svd.singular_values[i] < 1e-10 * scale)
        .map(|i| v_t.row(i).transpose())
        .collect();
    DMatrix::from_columns(&cols)
}
