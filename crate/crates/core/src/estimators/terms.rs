//! Per-row estimating-function and proxy terms, plus their complete-row
//! covariance blocks.

use nalgebra::{DMatrix, DVector};

use crate::data::ObservedDataset;
use crate::error::{Error, Result};
use crate::estfn::{self, EstimatingFunction, Theta};
use crate::lattice::PatternMask;
use crate::linalg;
use crate::predictors::PredictorBank;

use super::Scalarization;

type Term = (DVector<f64>, DMatrix<f64>);

/// Row terms `ψF(Z_i, θ)` and `F_k(X_{i,r_k}, θ)`. When `ψF` is affine in
/// `θ` every term is cached at `θ = 0` together with its Jacobian, so later
/// evaluations are exact linear updates.
pub(crate) struct Terms<'a> {
    pub data: &'a ObservedDataset,
    pub ef: &'a dyn EstimatingFunction,
    bank: Option<&'a PredictorBank>,
    pub aug: Vec<PatternMask>,
    affine: bool,
    psi0: Vec<Option<Term>>,
    proxy0: Vec<Vec<Option<Term>>>,
}

impl<'a> Terms<'a> {
    pub fn new(
        data: &'a ObservedDataset,
        ef: &'a dyn EstimatingFunction,
        bank: Option<&'a PredictorBank>,
        aug: Vec<PatternMask>,
    ) -> Result<Self> {
        if let Some(b) = bank {
            b.require(&aug)?;
        } else if !aug.is_empty() {
            return Err(Error::MissingPredictor(aug[0].to_string()));
        }
        let affine = ef.is_affine();
        let mut t = Self { data, ef, bank, aug, affine, psi0: Vec::new(), proxy0: Vec::new() };
        if affine {
            let zero = Theta::zeros(ef.dim());
            let req = ef.required();
            t.psi0 = data
                .rows()
                .map(|row| {
                    if row.mask.is_superset_of(req) {
                        Ok(Some((ef.evaluate(row.values, &zero), ef.jacobian(row.values, &zero))))
                    } else {
                        Ok(None)
                    }
                })
                .collect::<Result<_>>()?;
            t.proxy0 = data
                .rows()
                .map(|row| {
                    t.aug
                        .iter()
                        .map(|&r| {
                            if row.mask.is_superset_of(r) {
                                bank.expect("checked").evaluate(r, row, &zero).map(Some)
                            } else {
                                Ok(None)
                            }
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
        }
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.ef.dim()
    }

    /// `ψF` and its Jacobian on row `i`.
    pub fn psi(&self, i: usize, theta: &Theta) -> Result<Term> {
        if self.affine {
            match &self.psi0[i] {
                Some((b, j)) => Ok((b + j * theta, j.clone())),
                None => Err(self.missing(i)),
            }
        } else {
            let row = self.data.row(i);
            Ok((estfn::evaluate_row(self.ef, row, theta)?, estfn::jacobian_row(self.ef, row, theta)?))
        }
    }

    /// Proxy for augmented pattern `k` on row `i`.
    pub fn proxy(&self, i: usize, k: usize, theta: &Theta) -> Result<Term> {
        if self.affine {
            match &self.proxy0[i][k] {
                Some((b, j)) => Ok((b + j * theta, j.clone())),
                None => {
                    let row = self.data.row(i);
                    Err(Error::MaskMismatch { pattern: self.aug[k].to_string(), observed: row.mask.to_string() })
                }
            }
        } else {
            let bank = self.bank.ok_or_else(|| Error::MissingPredictor(self.aug[k].to_string()))?;
            bank.evaluate(self.aug[k], self.data.row(i), theta)
        }
    }

    fn missing(&self, i: usize) -> Error {
        let row = self.data.row(i);
        let req = self.ef.required();
        let m = req.modalities().find(|&m| !row.mask.observes(m)).unwrap_or(0);
        Error::MissingModality { row: row.id, modality: self.data.schema().modalities()[m].name.clone() }
    }

    pub fn complete_rows(&self, rows: &[usize]) -> Vec<usize> {
        rows.iter().copied().filter(|&i| self.data.masks()[i].is_full()).collect()
    }
}

/// Complete-row moments at a fixed `θ`: `Â = mean ∂ψF/∂θᵀ`, `V(ψF)`,
/// `C_k = Cov(ψF, F_k)` and `Cov(F_k, F_l)`.
#[derive(Debug, Clone)]
pub struct CovarianceBlocks {
    pub augmented: Vec<PatternMask>,
    pub a_hat: DMatrix<f64>,
    pub a_inv: DMatrix<f64>,
    pub v_psi: DMatrix<f64>,
    pub c: Vec<DMatrix<f64>>,
    pub f: Vec<Vec<DMatrix<f64>>>,
    pub n_complete: usize,
}

impl CovarianceBlocks {
    pub(crate) fn compute(terms: &Terms<'_>, rows: &[usize], theta: &Theta) -> Result<Self> {
        let d = terms.dim();
        let k = terms.aug.len();
        let complete = terms.complete_rows(rows);
        let n = complete.len();
        if n < d + 2 {
            return Err(Error::InsufficientCompleteRows { needed: d + 2, found: n });
        }
        let width = d * (1 + k);
        let mut w = DMatrix::zeros(n, width);
        let mut a_hat = DMatrix::zeros(d, d);
        for (row_pos, &i) in complete.iter().enumerate() {
            let (psi, jac) = terms.psi(i, theta)?;
            a_hat += jac;
            w.view_mut((row_pos, 0), (1, d)).copy_from(&psi.transpose());
            for kk in 0..k {
                let (f, _) = terms.proxy(i, kk, theta)?;
                w.view_mut((row_pos, d * (kk + 1)), (1, d)).copy_from(&f.transpose());
            }
        }
        a_hat /= n as f64;
        let means = w.row_mean();
        for mut r in w.row_iter_mut() {
            r -= &means;
        }
        let cov = (w.transpose() * &w) / (n as f64 - 1.0);
        let block = |a: usize, b: usize| cov.view((a * d, b * d), (d, d)).into_owned();
        let a_inv = linalg::inverse_conditioned(&a_hat, estfn::MAX_CONDITION).map_err(|_| Error::SingularA)?;
        Ok(Self {
            augmented: terms.aug.clone(),
            a_hat,
            a_inv,
            v_psi: block(0, 0),
            c: (0..k).map(|kk| block(0, kk + 1)).collect(),
            f: (0..k).map(|a| (0..k).map(|b| block(a + 1, b + 1)).collect()).collect(),
            n_complete: n,
        })
    }

    /// `Σ = Â⁻¹[V/π_M + Σ_k γ_k (C_k + C_kᵀ) + Σ_kl η_kl Cov(F_k, F_l)]Â⁻ᵀ`
    /// for weight moments `γ`, `η` of the chosen weighting.
    pub fn sandwich(&self, gamma: &[f64], eta: &DMatrix<f64>, pi_full: f64) -> DMatrix<f64> {
        let mut mid = &self.v_psi / pi_full;
        for (k, g) in gamma.iter().enumerate() {
            if *g != 0.0 {
                mid += (&self.c[k] + self.c[k].transpose()) * *g;
            }
        }
        for a in 0..gamma.len() {
            for b in 0..gamma.len() {
                if eta[(a, b)] != 0.0 {
                    mid += &self.f[a][b] * eta[(a, b)];
                }
            }
        }
        linalg::symmetrize(&(&self.a_inv * mid * self.a_inv.transpose()))
    }

    /// `ℓ(Â⁻¹ M Â⁻ᵀ)`.
    pub fn project(&self, m: &DMatrix<f64>, scal: &Scalarization) -> f64 {
        scal.apply(&(&self.a_inv * m * self.a_inv.transpose()))
    }
}
