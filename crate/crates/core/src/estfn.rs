//! Full-data estimating functions and root finding.
//!
//! An estimating function `ψF(z, θ)` with `E[ψF(Z, θ⋆)] = 0` defines the
//! target. Two built-ins cover the outcome mean and OLS coefficients; both are
//! affine in `θ`, which the estimators exploit through a single linear solve.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::data::{RowRef, Schema};
use crate::error::{Error, Result};
use crate::lattice::PatternMask;
use crate::linalg;

pub type Theta = DVector<f64>;

/// Jacobians with condition number above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

pub trait EstimatingFunction: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// Output dimension `d` (equal to the parameter dimension).
    fn dim(&self) -> usize;

    /// Modalities `ψF` reads.
    fn required(&self) -> PatternMask;

    /// `ψF(z, θ)` on a full-width value vector. Only required columns are read.
    fn evaluate(&self, z: &[f64], theta: &Theta) -> DVector<f64>;

    /// `∂ψF/∂θᵀ` at `(z, θ)`.
    fn jacobian(&self, z: &[f64], theta: &Theta) -> DMatrix<f64>;

    /// True when `ψF` is affine in `θ` for every `z`.
    fn is_affine(&self) -> bool {
        false
    }

    /// Outcome column when the target is a single outcome mean.
    fn mean_outcome(&self) -> Option<usize> {
        None
    }

    /// Second-order structure `ψF = x (y − xᵀθ)` for OLS targets:
    /// `(covariate columns, outcome column)`.
    fn ols_columns(&self) -> Option<(&[usize], usize)> {
        None
    }
}

/// Evaluates `ψF` on an observed row, failing if a required block is missing.
pub fn evaluate_row(ef: &dyn EstimatingFunction, row: RowRef<'_>, theta: &Theta) -> Result<DVector<f64>> {
    check_required(ef, row)?;
    Ok(ef.evaluate(row.values, theta))
}

pub fn jacobian_row(ef: &dyn EstimatingFunction, row: RowRef<'_>, theta: &Theta) -> Result<DMatrix<f64>> {
    check_required(ef, row)?;
    Ok(ef.jacobian(row.values, theta))
}

fn check_required(ef: &dyn EstimatingFunction, row: RowRef<'_>) -> Result<()> {
    let req = ef.required();
    if !row.mask.is_superset_of(req) {
        let missing = req.modalities().find(|&m| !row.mask.observes(m)).unwrap_or(0);
        return Err(Error::MissingModality { row: row.id, modality: format!("#{missing}") });
    }
    Ok(())
}

/// `ψF(z, θ) = y − θ`.
#[derive(Debug, Clone)]
pub struct MeanEf {
    outcome: usize,
    required: PatternMask,
}

impl MeanEf {
    pub fn new(schema: &Schema, outcome: &str) -> Result<Self> {
        let col = schema.column_index(outcome).ok_or_else(|| Error::UnknownColumn(outcome.into()))?;
        Ok(Self { outcome: col, required: schema.mask_covering(&[col])? })
    }
}

impl EstimatingFunction for MeanEf {
    fn name(&self) -> &str {
        "mean"
    }

    fn dim(&self) -> usize {
        1
    }

    fn required(&self) -> PatternMask {
        self.required
    }

    fn evaluate(&self, z: &[f64], theta: &Theta) -> DVector<f64> {
        DVector::from_element(1, z[self.outcome] - theta[0])
    }

    fn jacobian(&self, _z: &[f64], _theta: &Theta) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, -1.0)
    }

    fn is_affine(&self) -> bool {
        true
    }

    fn mean_outcome(&self) -> Option<usize> {
        Some(self.outcome)
    }
}

/// `ψF(z, θ) = x (y − xᵀθ)`. No intercept is added; include a constant
/// column in the schema to fit one.
#[derive(Debug, Clone)]
pub struct OlsEf {
    covariates: Vec<usize>,
    outcome: usize,
    required: PatternMask,
}

impl OlsEf {
    pub fn new(schema: &Schema, covariates: &[&str], outcome: &str) -> Result<Self> {
        if covariates.is_empty() {
            return Err(Error::InvalidConfig("OLS needs at least one covariate".into()));
        }
        let cols = covariates
            .iter()
            .map(|c| schema.column_index(c).ok_or_else(|| Error::UnknownColumn((*c).into())))
            .collect::<Result<Vec<_>>>()?;
        let y = schema.column_index(outcome).ok_or_else(|| Error::UnknownColumn(outcome.into()))?;
        let mut all = cols.clone();
        all.push(y);
        Ok(Self { required: schema.mask_covering(&all)?, covariates: cols, outcome: y })
    }
}

impl EstimatingFunction for OlsEf {
    fn name(&self) -> &str {
        "ols"
    }

    fn dim(&self) -> usize {
        self.covariates.len()
    }

    fn required(&self) -> PatternMask {
        self.required
    }

    fn evaluate(&self, z: &[f64], theta: &Theta) -> DVector<f64> {
        let x = DVector::from_iterator(self.dim(), self.covariates.iter().map(|&c| z[c]));
        let resid = z[self.outcome] - x.dot(theta);
        x * resid
    }

    fn jacobian(&self, z: &[f64], _theta: &Theta) -> DMatrix<f64> {
        let x = DVector::from_iterator(self.dim(), self.covariates.iter().map(|&c| z[c]));
        -(&x * x.transpose())
    }

    fn is_affine(&self) -> bool {
        true
    }

    fn ols_columns(&self) -> Option<(&[usize], usize)> {
        Some((&self.covariates, self.outcome))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 100 }
    }
}

/// Damped Newton on a residual `U(θ)` returning `(U, ∂U/∂θᵀ)`.
///
/// Stops when `‖U‖∞ ≤ tol`. A full step is halved until `‖U‖∞` decreases.
pub fn solve_root<F>(mut residual: F, theta0: Theta, opts: SolveOptions) -> Result<Theta>
where
    F: FnMut(&Theta) -> Result<(DVector<f64>, DMatrix<f64>)>,
{
    let mut theta = theta0;
    let (mut u, mut jac) = residual(&theta)?;
    let mut norm = linalg::max_abs(&u);
    for _ in 0..opts.max_iter {
        if norm <= opts.tol {
            return Ok(theta);
        }
        let step = linalg::solve_conditioned(&jac, &(-&u), MAX_CONDITION)
            .map_err(|cond| Error::SingularJacobian { cond })?;
        let mut t = 1.0;
        loop {
            let cand = &theta + &step * t;
            let (u_new, j_new) = residual(&cand)?;
            let n_new = linalg::max_abs(&u_new);
            if n_new < norm || t < 1e-9 {
                let tiny = step.norm() * t <= 1e-15 * (1.0 + theta.norm());
                theta = cand;
                u = u_new;
                jac = j_new;
                let stalled = n_new >= norm;
                norm = n_new;
                if tiny || stalled {
                    if norm <= opts.tol || tiny {
                        return Ok(theta);
                    }
                    return Err(Error::NoConvergence { iterations: opts.max_iter, residual: norm });
                }
                break;
            }
            t *= 0.5;
        }
    }
    if norm <= opts.tol {
        Ok(theta)
    } else {
        Err(Error::NoConvergence { iterations: opts.max_iter, residual: norm })
    }
}

/// Root of an affine residual from one evaluation at `theta0`.
pub fn solve_affine(u0: &DVector<f64>, jac: &DMatrix<f64>, theta0: &Theta) -> Result<Theta> {
    let step = linalg::solve_conditioned(jac, &(-u0), MAX_CONDITION)
        .map_err(|cond| Error::SingularJacobian { cond })?;
    Ok(theta0 + step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::PatternMask;

    fn ols_schema() -> Schema {
        Schema::with_sizes(&[("x", 2), ("y", 1)]).unwrap()
    }

    #[test]
    fn psi_mean_values() {
        let s = Schema::with_sizes(&[("x", 1), ("y", 1)]).unwrap();
        let ef = MeanEf::new(&s, "y").unwrap();
        assert_eq!(ef.evaluate(&[0.0, 3.0], &Theta::from_vec(vec![3.0]))[0], 0.0);
        assert_eq!(ef.evaluate(&[0.0, 5.0], &Theta::from_vec(vec![2.0]))[0], 3.0);
        assert_eq!(ef.jacobian(&[0.0, 5.0], &Theta::zeros(1))[(0, 0)], -1.0);
        assert_eq!(ef.required().to_string(), "01");
    }

    #[test]
    fn psi_mean_requires_outcome() {
        let s = Schema::with_sizes(&[("x", 1), ("y", 1)]).unwrap();
        let ef = MeanEf::new(&s, "y").unwrap();
        let row = RowRef { id: 4, mask: "10".parse().unwrap(), values: &[1.0, f64::NAN] };
        assert!(matches!(
            evaluate_row(&ef, row, &Theta::zeros(1)),
            Err(Error::MissingModality { row: 4, .. })
        ));
    }

    #[test]
    fn psi_ols_zero_residual() {
        let s = ols_schema();
        let ef = OlsEf::new(&s, &["x_1", "x_2"], "y").unwrap();
        let theta = Theta::from_vec(vec![2.5, -1.0]);
        let v = ef.evaluate(&[1.0, 0.0, 2.5], &theta);
        assert!(v.iter().all(|x| *x == 0.0));
        assert_eq!(ef.required(), PatternMask::full(2).unwrap());
    }

    #[test]
    fn mean_solve_matches_sample_mean() {
        let ys = [1.0, 2.0, 3.0, 6.0];
        let theta = solve_root(
            |t: &Theta| {
                let u = ys.iter().map(|y| y - t[0]).sum::<f64>() / ys.len() as f64;
                Ok((DVector::from_element(1, u), DMatrix::from_element(1, 1, -1.0)))
            },
            Theta::zeros(1),
            SolveOptions::default(),
        )
        .unwrap();
        assert!((theta[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn affine_newton_converges_in_one_step() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.5, 3.0]);
        let star = Theta::from_vec(vec![1.0, -2.0]);
        let mut calls = 0;
        let theta = solve_root(
            |t: &Theta| {
                calls += 1;
                Ok((&a * (t - &star), a.clone()))
            },
            Theta::zeros(2),
            SolveOptions::default(),
        )
        .unwrap();
        assert!((theta - star).norm() < 1e-12);
        // initial evaluation plus one step
        assert_eq!(calls, 2);
    }

    #[test]
    fn nonlinear_root_with_damping() {
        // U(θ) = atan(θ − 1): plain Newton diverges from far away.
        let theta = solve_root(
            |t: &Theta| {
                let x = t[0] - 1.0;
                Ok((
                    DVector::from_element(1, x.atan()),
                    DMatrix::from_element(1, 1, 1.0 / (1.0 + x * x)),
                ))
            },
            Theta::from_vec(vec![6.0]),
            SolveOptions::default(),
        )
        .unwrap();
        assert!((theta[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn singular_jacobian_detected() {
        let j = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let r = solve_root(
            |t: &Theta| Ok((&j * t + DVector::from_vec(vec![1.0, 0.0]), j.clone())),
            Theta::zeros(2),
            SolveOptions::default(),
        );
        assert!(matches!(r, Err(Error::SingularJacobian { .. })));
    }

    #[test]
    fn no_convergence_reported() {
        // U(θ) = θ² + 1 has no root; damping stalls at the minimum.
        let r = solve_root(
            |t: &Theta| {
                Ok((
                    DVector::from_element(1, t[0] * t[0] + 1.0),
                    DMatrix::from_element(1, 1, 2.0 * t[0] + 1e-3),
                ))
            },
            Theta::from_vec(vec![3.0]),
            SolveOptions { tol: 1e-10, max_iter: 20 },
        );
        assert!(r.is_err());
    }
}
