//! Conditional moments and sampling for jointly Gaussian columns.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::ExpectationModel;
use crate::data::{RowRef, Schema};
use crate::error::{Error, Result};
use crate::estfn::{EstimatingFunction, Theta};
use crate::lattice::PatternMask;
use crate::seed;

pub const DEFAULT_DRAWS: usize = 64;

/// Joint normal law of a subset of dataset columns.
#[derive(Debug, Clone)]
pub struct GaussianSpec {
    columns: Vec<usize>,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianSpec {
    pub fn new(columns: Vec<usize>, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let k = columns.len();
        if mean.len() != k || cov.shape() != (k, k) {
            return Err(Error::InvalidConfig("gaussian mean/covariance dimensions do not match columns".into()));
        }
        if (&cov - cov.transpose()).abs().max() > 1e-12 * cov.abs().max().max(1.0) {
            return Err(Error::NotPositiveDefinite("covariance is not symmetric".into()));
        }
        if Cholesky::new(cov.clone()).is_none() {
            return Err(Error::NotPositiveDefinite("gaussian covariance".into()));
        }
        Ok(Self { columns, mean, cov })
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }
}

/// Draws the unobserved columns of a row given its observed ones. Returns a
/// full-width vector.
pub trait ConditionalSampler: Send + Sync + fmt::Debug {
    fn sample(&self, row: RowRef<'_>, rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;
}

/// How conditional moments of unobserved columns can be obtained.
#[derive(Debug, Clone)]
pub enum JointModel {
    Gaussian(GaussianSpec),
    Generative(Arc<dyn ConditionalSampler>),
    Unspecified,
}

/// Law of the spec's columns given the ones pattern `r` observes.
#[derive(Debug, Clone)]
pub struct GaussianConditional {
    spec: GaussianSpec,
    observed: Vec<usize>,
    hidden: Vec<usize>,
    /// `Σ_UO Σ_OO⁻¹`.
    regression: DMatrix<f64>,
    /// `Σ_UU − Σ_UO Σ_OO⁻¹ Σ_OU`.
    residual_cov: DMatrix<f64>,
    residual_chol: Option<DMatrix<f64>>,
}

impl GaussianConditional {
    pub fn new(spec: &GaussianSpec, r: PatternMask, schema: &Schema) -> Result<Self> {
        let (observed, hidden): (Vec<usize>, Vec<usize>) =
            (0..spec.columns.len()).partition(|&k| r.observes(schema.modality_of_column(spec.columns[k])));
        let sub = |a: &[usize], b: &[usize]| DMatrix::from_fn(a.len(), b.len(), |i, j| spec.cov[(a[i], b[j])]);
        let s_uu = sub(&hidden, &hidden);
        let (regression, residual_cov) = if observed.is_empty() {
            (DMatrix::zeros(hidden.len(), 0), s_uu)
        } else {
            let s_oo = sub(&observed, &observed);
            let s_ou = sub(&observed, &hidden);
            let chol = Cholesky::new(s_oo).ok_or_else(|| Error::NotPositiveDefinite("observed block".into()))?;
            let reg = chol.solve(&s_ou).transpose();
            let rc = &s_uu - &reg * &s_ou;
            (reg, (&rc + rc.transpose()) * 0.5)
        };
        let residual_chol = if hidden.is_empty() {
            None
        } else {
            Some(
                Cholesky::<f64, Dyn>::new(residual_cov.clone())
                    .ok_or_else(|| Error::NotPositiveDefinite("conditional covariance".into()))?
                    .l(),
            )
        };
        Ok(Self { spec: spec.clone(), observed, hidden, regression, residual_cov, residual_chol })
    }

    /// Conditional mean of all spec columns (observed ones equal their values).
    pub fn conditional_mean(&self, row: RowRef<'_>) -> Result<DVector<f64>> {
        let mut m = self.spec.mean.clone();
        let mut dev = DVector::zeros(self.observed.len());
        for (i, &k) in self.observed.iter().enumerate() {
            let v = row.values[self.spec.columns[k]];
            if v.is_nan() {
                return Err(Error::MissingModality { row: row.id, modality: format!("column {}", self.spec.columns[k]) });
            }
            m[k] = v;
            dev[i] = v - self.spec.mean[k];
        }
        let shift = &self.regression * dev;
        for (i, &k) in self.hidden.iter().enumerate() {
            m[k] += shift[i];
        }
        Ok(m)
    }

    /// Conditional covariance of all spec columns; zero on observed ones.
    pub fn conditional_cov(&self) -> DMatrix<f64> {
        let k = self.spec.columns.len();
        let mut s = DMatrix::zeros(k, k);
        for (i, &a) in self.hidden.iter().enumerate() {
            for (j, &b) in self.hidden.iter().enumerate() {
                s[(a, b)] = self.residual_cov[(i, j)];
            }
        }
        s
    }
}

impl ConditionalSampler for GaussianConditional {
    fn sample(&self, row: RowRef<'_>, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let m = self.conditional_mean(row)?;
        let mut z = row.values.to_vec();
        for (k, &c) in self.spec.columns.iter().enumerate() {
            z[c] = m[k];
        }
        if let Some(l) = &self.residual_chol {
            let e = DVector::from_fn(self.hidden.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let d = l * e;
            for (i, &k) in self.hidden.iter().enumerate() {
                z[self.spec.columns[k]] += d[i];
            }
        }
        Ok(z)
    }
}

/// Exact `E[x(y − xᵀθ) | x_r] = E[xy | x_r] − E[xxᵀ | x_r] θ` under a
/// Gaussian joint law.
#[derive(Debug, Clone)]
pub struct OlsMoments {
    cond: GaussianConditional,
    x_pos: Vec<usize>,
    y_pos: usize,
}

impl ExpectationModel for OlsMoments {
    fn dim(&self) -> usize {
        self.x_pos.len()
    }

    fn expect(&self, row: RowRef<'_>, theta: &Theta) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let m = self.cond.conditional_mean(row)?;
        let s = &self.cond.residual_cov;
        let d = self.x_pos.len();
        // Only hidden entries carry residual covariance.
        let cov = |a: usize, b: usize| -> f64 {
            match (self.cond.hidden.iter().position(|&h| h == a), self.cond.hidden.iter().position(|&h| h == b)) {
                (Some(i), Some(j)) => s[(i, j)],
                _ => 0.0,
            }
        };
        let exx = DMatrix::from_fn(d, d, |i, j| {
            let (a, b) = (self.x_pos[i], self.x_pos[j]);
            m[a] * m[b] + cov(a, b)
        });
        let exy = DVector::from_fn(d, |i, _| m[self.x_pos[i]] * m[self.y_pos] + cov(self.x_pos[i], self.y_pos));
        Ok((exy - &exx * theta, -exx))
    }
}

/// Monte Carlo `E[ψF(Z, θ) | x_r]` from a conditional sampler, with a fixed
/// per-row stream derived from `(seed, row id)`.
#[derive(Debug, Clone)]
pub struct SampledExpectation {
    sampler: Arc<dyn ConditionalSampler>,
    ef: Arc<dyn EstimatingFunction>,
    draws: usize,
    seed: u64,
}

impl SampledExpectation {
    pub fn new(sampler: Arc<dyn ConditionalSampler>, ef: Arc<dyn EstimatingFunction>, draws: usize, seed: u64) -> Result<Self> {
        if draws == 0 {
            return Err(Error::InvalidConfig("at least one draw is required".into()));
        }
        Ok(Self { sampler, ef, draws, seed })
    }
}

impl ExpectationModel for SampledExpectation {
    fn dim(&self) -> usize {
        self.ef.dim()
    }

    fn expect(&self, row: RowRef<'_>, theta: &Theta) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let d = self.ef.dim();
        let mut rng = seed::rng(self.seed, &[row.id]);
        let (mut v, mut j) = (DVector::zeros(d), DMatrix::zeros(d, d));
        for _ in 0..self.draws {
            let z = self.sampler.sample(row, &mut rng)?;
            v += self.ef.evaluate(&z, theta);
            j += self.ef.jacobian(&z, theta);
        }
        let n = self.draws as f64;
        Ok((v / n, j / n))
    }
}

/// Proxy for `E[ψF | x_r]` of an OLS target: exact for a Gaussian joint
/// law, Monte Carlo for a generative sampler.
pub fn ols_conditional_moments(
    model: &JointModel,
    ef: Arc<dyn EstimatingFunction>,
    r: PatternMask,
    schema: &Schema,
    seed: u64,
) -> Result<Arc<dyn ExpectationModel>> {
    let (covs, y) = ef
        .ols_columns()
        .map(|(c, y)| (c.to_vec(), y))
        .ok_or_else(|| Error::InvalidConfig("conditional moments need an OLS target".into()))?;
    match model {
        JointModel::Gaussian(spec) => {
            let pos = |c: usize| {
                spec.columns
                    .iter()
                    .position(|&k| k == c)
                    .ok_or_else(|| Error::NonGaussianSpec(format!("column {c} is outside the gaussian spec")))
            };
            let x_pos = covs.iter().map(|&c| pos(c)).collect::<Result<Vec<_>>>()?;
            let y_pos = pos(y)?;
            Ok(Arc::new(OlsMoments { cond: GaussianConditional::new(spec, r, schema)?, x_pos, y_pos }))
        }
        JointModel::Generative(s) => Ok(Arc::new(SampledExpectation::new(s.clone(), ef, DEFAULT_DRAWS, seed)?)),
        JointModel::Unspecified => Err(Error::NonGaussianSpec("no gaussian law or sampler supplied".into())),
    }
}
