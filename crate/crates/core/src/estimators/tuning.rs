//! Variance-minimizing tuning parameters.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{self, AdaptiveAlpha, PatternMask, PatternTable, SchemeKind, WeightScheme};
use crate::linalg;

use super::terms::CovarianceBlocks;
use super::Scalarization;

/// Adds `εI` when the smallest eigenvalue of `m` falls below `1e−10·tr/k`,
/// with `ε = 1e−8·tr/k`. Returns `ε` (zero if untouched).
pub fn ridge(m: &mut DMatrix<f64>) -> f64 {
    let k = m.nrows();
    if k == 0 {
        return 0.0;
    }
    let tr = m.trace();
    let scale = if tr > 0.0 && tr.is_finite() { tr / k as f64 } else { 1.0 };
    let min_ev = linalg::symmetric_eigenvalues(m)[0];
    if min_ev < 1e-10 * scale {
        let eps = 1e-8 * scale;
        for i in 0..k {
            m[(i, i)] += eps;
        }
        eps
    } else {
        0.0
    }
}

/// `G = η∘K`, `L = γ∘ℓ_k` with `K_kl = ℓ(Â⁻¹Cov(F_k,F_l)Â⁻ᵀ)` and
/// `ℓ_k = ℓ(Â⁻¹Cov(ψF,F_k)Â⁻ᵀ)`. The scalarized variance at tuning `α` is
/// `c0 + αᵀGα + 2Lᵀα`.
#[derive(Debug, Clone, Serialize)]
pub struct GLEstimate {
    pub scheme: SchemeKind,
    pub index: Vec<PatternMask>,
    #[serde(skip)]
    pub g: DMatrix<f64>,
    #[serde(skip)]
    pub l: DVector<f64>,
    #[serde(skip)]
    pub a_hat: DMatrix<f64>,
    pub c0: f64,
    /// Condition number of `G` before any ridge.
    pub cond: f64,
    pub ridge: f64,
}

impl GLEstimate {
    pub fn from_blocks(
        blocks: &CovarianceBlocks,
        table: &PatternTable,
        scheme: SchemeKind,
        scal: &Scalarization,
    ) -> Result<Self> {
        let ws = match scheme {
            SchemeKind::Ps => WeightScheme::Ps,
            SchemeKind::Ray => WeightScheme::Ray,
            SchemeKind::Adaptive => {
                return Err(Error::InvalidConfig("adaptive tuning uses the constrained program".into()))
            }
        };
        let (gamma, eta) = lattice::gamma_eta(&ws, table)?;
        let k = gamma.len();
        let mut g = DMatrix::from_fn(k, k, |a, b| eta[(a, b)] * blocks.project(&blocks.f[a][b], scal));
        g = linalg::symmetrize(&g);
        let l = DVector::from_fn(k, |a, _| gamma[a] * blocks.project(&blocks.c[a], scal));
        let cond = if k == 0 { 1.0 } else { linalg::condition_number(&g) };
        let ridge = ridge(&mut g);
        Ok(Self {
            scheme,
            index: blocks.augmented.clone(),
            g,
            l,
            a_hat: blocks.a_hat.clone(),
            c0: blocks.project(&blocks.v_psi, scal) / table.pi_full(),
            cond,
            ridge,
        })
    }

    pub fn objective(&self, alpha: &DVector<f64>) -> f64 {
        self.c0 + alpha.dot(&(&self.g * alpha)) + 2.0 * self.l.dot(alpha)
    }
}

/// `α⋆ = −G⁻¹L` and the efficiency gain `LᵀG⁻¹L`.
pub fn optimal_alpha(gl: &GLEstimate) -> Result<(DVector<f64>, f64)> {
    optimal_alpha_raw(&gl.g, &gl.l)
}

pub fn optimal_alpha_raw(g: &DMatrix<f64>, l: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    if g.nrows() == 0 {
        return Ok((DVector::zeros(0), 0.0));
    }
    let chol = g.clone().cholesky().ok_or(Error::SingularG)?;
    let ginv_l = chol.solve(l);
    let gain = l.dot(&ginv_l).max(0.0);
    Ok((-ginv_l, gain))
}

/// The adaptive program: minimize `c0 + αᵀHα + gᵀα` subject to
/// `Σ_{s⊇r} α_{r,s} = 0` for every augmented `r`.
#[derive(Debug, Clone)]
pub struct AdaptiveProgram {
    pub variables: Vec<(PatternMask, PatternMask)>,
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub constraints: DMatrix<f64>,
    pub c0: f64,
    /// Condition number of `H` before any ridge.
    pub cond: f64,
    pub ridge: f64,
}

#[derive(Debug, Clone)]
pub struct AdaptiveSolution {
    pub alpha: AdaptiveAlpha,
    pub objective: f64,
    pub constraint_residual: f64,
    pub cond_kkt: f64,
}

impl AdaptiveProgram {
    pub fn from_blocks(blocks: &CovarianceBlocks, table: &PatternTable, scal: &Scalarization) -> Result<Self> {
        let variables = AdaptiveAlpha::variables(table);
        if variables.is_empty() {
            return Err(Error::DegenerateProgram);
        }
        let aug = table.augmented();
        let pos = |r: PatternMask| aug.iter().position(|&a| a == r).expect("augmented");
        let nk = aug.len();
        let kmat = DMatrix::from_fn(nk, nk, |a, b| blocks.project(&blocks.f[a][b], scal));
        let ell: Vec<f64> = (0..nk).map(|a| blocks.project(&blocks.c[a], scal)).collect();
        let full = table.full();
        let pm = table.pi_full();
        let nv = variables.len();
        let mut h = DMatrix::zeros(nv, nv);
        let mut g = DVector::zeros(nv);
        let mut constraints = DMatrix::zeros(nk, nv);
        for (i, &(r, s)) in variables.iter().enumerate() {
            let ps = table.pi(s).expect("s ∈ Q");
            for (j, &(r2, s2)) in variables.iter().enumerate() {
                if s == s2 {
                    h[(i, j)] = kmat[(pos(r), pos(r2))] / ps;
                }
            }
            if s == full {
                g[i] = 2.0 * ell[pos(r)] / pm;
            }
            constraints[(pos(r), i)] = 1.0;
        }
        let mut h = linalg::symmetrize(&h);
        let cond = linalg::condition_number(&h);
        let ridge = ridge(&mut h);
        Ok(Self { variables, h, g, constraints, c0: blocks.project(&blocks.v_psi, scal) / pm, cond, ridge })
    }

    pub fn objective(&self, alpha: &DVector<f64>) -> f64 {
        self.c0 + alpha.dot(&(&self.h * alpha)) + self.g.dot(alpha)
    }

    pub fn objective_at(&self, alpha: &AdaptiveAlpha) -> f64 {
        let v = DVector::from_iterator(self.variables.len(), self.variables.iter().map(|&(r, s)| alpha.get(r, s)));
        self.objective(&v)
    }

    /// Solves `[2H Cᵀ; C 0][α; μ] = [−g; 0]`.
    pub fn solve(&self, table: &PatternTable) -> Result<AdaptiveSolution> {
        let nv = self.variables.len();
        let nc = self.constraints.nrows();
        let n = nv + nc;
        let mut kkt = DMatrix::zeros(n, n);
        kkt.view_mut((0, 0), (nv, nv)).copy_from(&(&self.h * 2.0));
        kkt.view_mut((0, nv), (nv, nc)).copy_from(&self.constraints.transpose());
        kkt.view_mut((nv, 0), (nc, nv)).copy_from(&self.constraints);
        let mut rhs = DVector::zeros(n);
        rhs.rows_mut(0, nv).copy_from(&(-&self.g));
        let cond_kkt = linalg::condition_number(&kkt);
        if !(cond_kkt < 1e14) {
            return Err(Error::SingularKKT);
        }
        let lu = kkt.clone().lu();
        let mut sol = lu.solve(&rhs).ok_or(Error::SingularKKT)?;
        // One step of iterative refinement tightens feasibility.
        let resid = &rhs - &kkt * &sol;
        if let Some(corr) = lu.solve(&resid) {
            sol += corr;
        }
        let alpha_vec = sol.rows(0, nv).into_owned();
        let constraint_residual = (&self.constraints * &alpha_vec).amax();
        let alpha = AdaptiveAlpha::from_vector(table, alpha_vec.as_slice())?;
        Ok(AdaptiveSolution { objective: self.objective(&alpha_vec), alpha, constraint_residual, cond_kkt })
    }
}
