//! Main and remainder terms of the restricted decomposition for `f = Y`
//! under a zero-mean Gaussian `(X1, X2, Y)` with exchangeable correlation.
//!
//! Every linear function `cᵀv` is carried as its coefficient vector `c`.
//! Conditioning on a subset `O` maps `c` to `Σ_OO⁻¹ Σ_O· c` on `O`, so
//!
//! ```text
//! P_s f   = Σ_{r∈Q, r⊆s} (−1)^{|s|−|r|} A_r f
//! Rem_s f = Σ_{r∈Q, s⊄r} π_r A_r[P_s f]
//! ```
//!
//! are exact, and `Σ_r π_r A_r f = Σ_s (λ_s P_s f + Rem_s f)` with
//! `Σ_s Rem_s f = 0`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{PatternMask, PatternTable};
use crate::seed;

use super::exchangeable_check;

const Y: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Term {
    Main,
    Remainder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderRow {
    pub s: String,
    pub rho: f64,
    pub term: Term,
    pub variance: f64,
    pub mc_variance: Option<f64>,
    pub mc_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderStudy {
    pub rows: Vec<RemainderRow>,
    /// `max |Σ_s Rem_s|` over coefficients, per `ρ`.
    pub remainder_sums: Vec<(f64, f64)>,
    /// `max |Σ_r π_r A_r f − Σ_s (λ_s P_s f + Rem_s f)|`, per `ρ`.
    pub operator_residuals: Vec<(f64, f64)>,
}

impl RemainderStudy {
    pub fn row(&self, s: &str, rho: f64, term: Term) -> Option<&RemainderRow> {
        self.rows.iter().find(|r| r.s == s && r.term == term && (r.rho - rho).abs() < 1e-12)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McOptions {
    /// Independent replicate estimates per `ρ`.
    pub batches: usize,
    /// Draws per regression fit and per evaluation sample.
    pub draws: usize,
    pub seed: u64,
}

impl Default for McOptions {
    fn default() -> Self {
        Self { batches: 50, draws: 10_000, seed: 0 }
    }
}

/// Exact operators for one `ρ` and one pattern table over `(X1, X2, Y)`.
#[derive(Debug, Clone)]
pub struct ExactRemainder {
    sigma: Matrix3<f64>,
    chol: Matrix3<f64>,
    table: PatternTable,
}

fn observed(r: PatternMask) -> Vec<usize> {
    r.modalities().collect()
}

fn sign(k: u32) -> f64 {
    if k % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn all_subsets() -> Vec<PatternMask> {
    (1..8u16).map(|b| PatternMask::new(b, 3).expect("width 3")).collect()
}

/// Coefficients on `O` of the least-squares projection of `cᵀv` on `v_O`
/// for second-moment matrix `s`.
fn project_with(s: &Matrix3<f64>, r: PatternMask, c: &Vector3<f64>) -> Vector3<f64> {
    if r.is_full() {
        return *c;
    }
    let o = observed(r);
    let s_oo = DMatrix::from_fn(o.len(), o.len(), |i, j| s[(o[i], o[j])]);
    let s_oc = DVector::from_fn(o.len(), |i, _| (0..3).map(|k| s[(o[i], k)] * c[k]).sum());
    let b = s_oo.lu().solve(&s_oc).unwrap_or_else(|| DVector::zeros(o.len()));
    let mut out = Vector3::zeros();
    for (i, &k) in o.iter().enumerate() {
        out[k] = b[i];
    }
    out
}

impl ExactRemainder {
    pub fn new(rho: f64, table: &PatternTable) -> Result<Self> {
        exchangeable_check(rho, 3)?;
        if table.width() != 3 {
            return Err(Error::MaskWidth { expected: 3, found: table.width() });
        }
        let sigma = Matrix3::from_fn(|i, j| if i == j { 1.0 } else { rho });
        let chol = sigma.cholesky().ok_or_else(|| Error::NotPositiveDefinite(format!("rho = {rho}")))?.l();
        Ok(Self { sigma, chol, table: table.clone() })
    }

    pub fn project(&self, r: PatternMask, c: &Vector3<f64>) -> Vector3<f64> {
        project_with(&self.sigma, r, c)
    }

    pub fn variance(&self, c: &Vector3<f64>) -> f64 {
        c.dot(&(self.sigma * c))
    }

    /// `P_s` applied to `c`, with `A_r` supplied by `proj`.
    fn p_with(&self, s: PatternMask, proj: &mut dyn FnMut(PatternMask) -> Vector3<f64>) -> Vector3<f64> {
        let mut out = Vector3::zeros();
        for &r in self.table.patterns() {
            if r.is_subset_of(s) {
                out += proj(r) * sign(s.count() - r.count());
            }
        }
        out
    }

    fn rem_with(
        &self,
        s: PatternMask,
        p: &Vector3<f64>,
        proj: &mut dyn FnMut(PatternMask, &Vector3<f64>) -> Vector3<f64>,
    ) -> Vector3<f64> {
        let mut out = Vector3::zeros();
        for (&r, &pi) in self.table.patterns().iter().zip(self.table.proportions()) {
            if !r.is_superset_of(s) {
                out += proj(r, p) * pi;
            }
        }
        out
    }

    pub fn p(&self, s: PatternMask) -> Vector3<f64> {
        let e = Vector3::ith(Y, 1.0);
        self.p_with(s, &mut |r| self.project(r, &e))
    }

    /// `λ_s P_s f`.
    pub fn main(&self, s: PatternMask) -> Vector3<f64> {
        self.p(s) * self.table.lambda(s)
    }

    pub fn remainder(&self, s: PatternMask) -> Vector3<f64> {
        let p = self.p(s);
        self.rem_with(s, &p, &mut |r, c| self.project(r, c))
    }

    /// Subsets with a nonzero `P_s`, i.e. containing some observed pattern.
    pub fn active_subsets(&self) -> Vec<PatternMask> {
        all_subsets().into_iter().filter(|s| self.table.patterns().iter().any(|r| r.is_subset_of(*s))).collect()
    }

    pub fn remainder_sum(&self) -> Vector3<f64> {
        all_subsets().into_iter().map(|s| self.remainder(s)).sum()
    }

    pub fn operator_residual(&self) -> f64 {
        let e = Vector3::ith(Y, 1.0);
        let lhs: Vector3<f64> = self
            .table
            .patterns()
            .iter()
            .zip(self.table.proportions())
            .map(|(&r, &pi)| self.project(r, &e) * pi)
            .sum();
        let rhs: Vector3<f64> = all_subsets().into_iter().map(|s| self.main(s) + self.remainder(s)).sum();
        (lhs - rhs).amax()
    }

    fn second_moment(&self, rng: &mut ChaCha8Rng, n: usize) -> Matrix3<f64> {
        let mut s = Matrix3::zeros();
        for _ in 0..n {
            let e = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            let v = self.chol * e;
            s += v * v.transpose();
        }
        s / n as f64
    }

    /// One replicate of every main and remainder coefficient vector, with
    /// each projection fitted on its own fresh sample, so the fitted
    /// vectors are unbiased for the exact ones.
    fn fitted(&self, subsets: &[PatternMask], rng: &mut ChaCha8Rng, n: usize) -> Vec<(Vector3<f64>, Vector3<f64>)> {
        let e = Vector3::ith(Y, 1.0);
        let ay: Vec<(PatternMask, Vector3<f64>)> = self
            .table
            .patterns()
            .iter()
            .map(|&r| {
                let s = if r.is_full() { self.sigma } else { self.second_moment(rng, n) };
                (r, project_with(&s, r, &e))
            })
            .collect();
        subsets
            .iter()
            .map(|&s| {
                let p = self.p_with(s, &mut |r| ay.iter().find(|(q, _)| *q == r).expect("pattern").1);
                let rem = self.rem_with(s, &p, &mut |r, c| {
                    let m = self.second_moment(rng, n);
                    project_with(&m, r, c)
                });
                (p * self.table.lambda(s), rem)
            })
            .collect()
    }

    /// Unbiased Monte Carlo variances: per batch, `ĉ₁ᵀ S ĉ₂` for two
    /// independent fitted replicates and an independent second-moment
    /// sample `S`. Returns `(mean, se)` per subset for main and remainder.
    pub fn monte_carlo(&self, subsets: &[PatternMask], opts: &McOptions, rho: f64) -> Vec<[(f64, f64); 2]> {
        let mut rng = seed::rng(opts.seed, &[seed::label("remainder"), rho.to_bits()]);
        let mut draws: Vec<Vec<[f64; 2]>> = vec![Vec::with_capacity(opts.batches); subsets.len()];
        for _ in 0..opts.batches {
            let a = self.fitted(subsets, &mut rng, opts.draws);
            let b = self.fitted(subsets, &mut rng, opts.draws);
            let s = self.second_moment(&mut rng, opts.draws);
            for (k, ((ma, ra), (mb, rb))) in a.iter().zip(&b).enumerate() {
                draws[k].push([ma.dot(&(s * mb)), ra.dot(&(s * rb))]);
            }
        }
        draws
            .iter()
            .map(|d| {
                let stat = |j: usize| {
                    let n = d.len() as f64;
                    let m = d.iter().map(|x| x[j]).sum::<f64>() / n;
                    let var = d.iter().map(|x| (x[j] - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                    (m, (var / n).sqrt())
                };
                [stat(0), stat(1)]
            })
            .collect()
    }
}

/// Exact variances of `λ_s P_s f` and `Rem_s f` for every active `s` and
/// every `ρ`, optionally with Monte Carlo confirmation.
pub fn remainder_study(rho_grid: &[f64], table: &PatternTable, mc: Option<&McOptions>) -> Result<RemainderStudy> {
    let per_rho = rho_grid
        .par_iter()
        .map(|&rho| {
            let ex = ExactRemainder::new(rho, table)?;
            let subsets = ex.active_subsets();
            let mc_vals = mc.map(|o| ex.monte_carlo(&subsets, o, rho));
            let mut rows = Vec::new();
            for (k, &s) in subsets.iter().enumerate() {
                for (j, (term, c)) in [(Term::Main, ex.main(s)), (Term::Remainder, ex.remainder(s))].into_iter().enumerate() {
                    rows.push(RemainderRow {
                        s: s.to_string(),
                        rho,
                        term,
                        variance: ex.variance(&c),
                        mc_variance: mc_vals.as_ref().map(|v| v[k][j].0),
                        mc_se: mc_vals.as_ref().map(|v| v[k][j].1),
                    });
                }
            }
            Ok((rows, (rho, ex.remainder_sum().amax()), (rho, ex.operator_residual())))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut study = RemainderStudy { rows: Vec::new(), remainder_sums: Vec::new(), operator_residuals: Vec::new() };
    for (rows, sum, op) in per_rho {
        study.rows.extend(rows);
        study.remainder_sums.push(sum);
        study.operator_residuals.push(op);
    }
    Ok(study)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> PatternTable {
        let w = ["111", "110", "101", "100"].iter().map(|s| (s.parse().unwrap(), 0.25)).collect();
        PatternTable::from_proportions(3, w).unwrap()
    }

    fn m(s: &str) -> PatternMask {
        s.parse().unwrap()
    }

    #[test]
    fn projection_matches_closed_form() {
        // E[Y | X1] = ρ X1; E[Y | X1, X2] = ρ/(1+ρ)(X1 + X2).
        let rho = 0.3;
        let ex = ExactRemainder::new(rho, &table()).unwrap();
        let e = Vector3::new(0.0, 0.0, 1.0);
        assert!((ex.project(m("100"), &e) - Vector3::new(rho, 0.0, 0.0)).amax() < 1e-15);
        let b = rho / (1.0 + rho);
        assert!((ex.project(m("110"), &e) - Vector3::new(b, b, 0.0)).amax() < 1e-15);
        assert_eq!(ex.project(m("111"), &e), e);
    }

    #[test]
    fn remainders_vanish_under_conditional_independence() {
        let ex = ExactRemainder::new(0.0, &table()).unwrap();
        for s in ex.active_subsets() {
            assert_eq!(ex.variance(&ex.remainder(s)), 0.0, "{s}");
        }
        assert!(ex.variance(&ex.main(m("101"))) > 0.0);
    }

    #[test]
    fn identities_hold_across_rho() {
        for k in -4..=8 {
            let ex = ExactRemainder::new(k as f64 / 10.0, &table()).unwrap();
            assert!(ex.remainder_sum().amax() < 1e-14);
            assert!(ex.operator_residual() < 1e-14);
        }
    }

    #[test]
    fn nonpositive_definite_rho_is_rejected() {
        assert!(matches!(ExactRemainder::new(-0.5, &table()), Err(Error::NotPositiveDefinite(_))));
        assert!(matches!(ExactRemainder::new(1.0, &table()), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn monte_carlo_is_centered_on_exact() {
        let opts = McOptions { batches: 30, draws: 4000, seed: 5 };
        let study = remainder_study(&[0.0, 0.5], &table(), Some(&opts)).unwrap();
        for r in &study.rows {
            let (mc, se) = (r.mc_variance.unwrap(), r.mc_se.unwrap());
            assert!((mc - r.variance).abs() <= 4.0 * se + 1e-12, "{r:?}");
        }
    }
}
