//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// 2-norm condition number; `inf` for singular or empty-rank matrices.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Solves `m x = b`, refusing when `cond(m)` exceeds `max_cond`.
pub fn solve_conditioned(m: &DMatrix<f64>, b: &DVector<f64>, max_cond: f64) -> Result<DVector<f64>, f64> {
    let cond = condition_number(m);
    if !(cond <= max_cond) {
        return Err(cond);
    }
    m.clone().lu().solve(b).ok_or(f64::INFINITY)
}

pub fn inverse_conditioned(m: &DMatrix<f64>, max_cond: f64) -> Result<DMatrix<f64>, f64> {
    let cond = condition_number(m);
    if !(cond <= max_cond) {
        return Err(cond);
    }
    m.clone().try_inverse().ok_or(f64::INFINITY)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}
