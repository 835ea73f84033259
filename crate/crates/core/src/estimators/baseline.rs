//! Complete-case and two-group prediction-powered estimators.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::data::ObservedDataset;
use crate::error::{Error, Result};
use crate::estfn::{EstimatingFunction, SolveOptions, Theta};
use crate::lattice::PatternMask;
use crate::linalg;
use crate::predictors::PredictorBank;

use super::terms::Terms;
use super::{naive_theta, report, Diagnostics, EstimateReport};

/// Solves `ψF` over rows observing every required modality.
/// `Σ̂ = Â⁻¹V̂Â⁻ᵀ/π̂_usable`.
pub fn naive_estimate(data: &ObservedDataset, ef: &dyn EstimatingFunction, level: f64) -> Result<EstimateReport> {
    let terms = Terms::new(data, ef, None, Vec::new())?;
    let rows: Vec<usize> = (0..data.len()).collect();
    let theta = naive_theta(&terms, &rows, SolveOptions::default())?;
    let req = ef.required();
    let usable: Vec<usize> = rows.into_iter().filter(|&i| data.masks()[i].is_superset_of(req)).collect();
    let d = ef.dim();
    let nu = usable.len();
    let mut a = DMatrix::zeros(d, d);
    let mut psis = DMatrix::zeros(nu, d);
    for (k, &i) in usable.iter().enumerate() {
        let (v, j) = terms.psi(i, &theta)?;
        a += j;
        psis.set_row(k, &v.transpose());
    }
    a /= nu as f64;
    let v = sample_cov(&psis);
    let a_inv = linalg::inverse_conditioned(&a, crate::estfn::MAX_CONDITION).map_err(|_| Error::SingularA)?;
    let pi_usable = nu as f64 / data.len() as f64;
    let sigma = linalg::symmetrize(&(&a_inv * v * a_inv.transpose() / pi_usable));
    report("naive", theta, sigma, data.len(), BTreeMap::new(), level, Diagnostics::default())
}

fn sample_cov(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mean = m.row_mean();
    let mut c = m.clone();
    for mut r in c.row_iter_mut() {
        r -= &mean;
    }
    c.transpose() * c / (n as f64 - 1.0)
}

/// Two-group summary for the outcome mean: labeled rows observe the outcome,
/// unlabeled rows do not; `f` is the proxy at the pattern shared by all rows.
struct TwoGroup {
    y: Vec<f64>,
    f_lab: Vec<f64>,
    f_unl: Vec<f64>,
    pattern: PatternMask,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn cov(a: &[f64], b: &[f64]) -> f64 {
    if a.len() < 2 {
        return 0.0;
    }
    let (ma, mb) = (mean(a), mean(b));
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 - 1.0)
}

fn two_group(data: &ObservedDataset, bank: &PredictorBank) -> Result<TwoGroup> {
    let ef = bank.ef();
    let outcome = ef.mean_outcome().ok_or(Error::NotMeanTarget)?;
    let table = data.pattern_table()?;
    let shared = table
        .patterns()
        .iter()
        .try_fold(table.full(), |acc, &p| acc.intersection(p))
        .ok_or_else(|| Error::InvalidConfig("observed patterns share no modality for a single predictor".into()))?;
    if shared.is_full() {
        return Err(Error::NoUnlabeledRows);
    }
    let req = ef.required();
    let zero = Theta::zeros(1);
    let (mut y, mut f_lab, mut f_unl) = (Vec::new(), Vec::new(), Vec::new());
    for row in data.rows() {
        let f = bank.evaluate(shared, row, &zero)?.0[0];
        if row.mask.is_superset_of(req) {
            y.push(row.values[outcome]);
            f_lab.push(f);
        } else {
            f_unl.push(f);
        }
    }
    if f_unl.is_empty() {
        return Err(Error::NoUnlabeledRows);
    }
    if y.len() < 2 {
        return Err(Error::InsufficientData(format!("{} labeled rows", y.len())));
    }
    Ok(TwoGroup { y, f_lab, f_unl, pattern: shared })
}

impl TwoGroup {
    /// Variance of `θ̂(α)` for fixed `α`.
    fn variance(&self, alpha: f64) -> f64 {
        let (nl, nu) = (self.y.len() as f64, self.f_unl.len() as f64);
        (cov(&self.y, &self.y) - 2.0 * alpha * cov(&self.y, &self.f_lab) + alpha * alpha * cov(&self.f_lab, &self.f_lab))
            / nl
            + alpha * alpha * cov(&self.f_unl, &self.f_unl) / nu
    }

    fn optimal_alpha(&self) -> f64 {
        let (nl, nu) = (self.y.len() as f64, self.f_unl.len() as f64);
        let den = cov(&self.f_lab, &self.f_lab) / nl + cov(&self.f_unl, &self.f_unl) / nu;
        if den > 0.0 {
            cov(&self.y, &self.f_lab) / nl / den
        } else {
            0.0
        }
    }

    fn estimate(&self, alpha: f64) -> f64 {
        mean(&self.y) + alpha * (mean(&self.f_unl) - mean(&self.f_lab))
    }

    fn report(&self, name: &str, alpha: f64, n: usize, level: f64) -> Result<EstimateReport> {
        let sigma = DMatrix::from_element(1, 1, self.variance(alpha) * n as f64);
        let alpha_map = BTreeMap::from([(self.pattern.to_string(), alpha)]);
        report(name, DVector::from_element(1, self.estimate(alpha)), sigma, n, alpha_map, level, Diagnostics::default())
    }
}

/// `mean_L(Y) + (mean_U(f) − mean_L(f))`.
pub fn ppi_estimate(data: &ObservedDataset, bank: &PredictorBank, level: f64) -> Result<EstimateReport> {
    two_group(data, bank)?.report("ppi", 1.0, data.len(), level)
}

/// PPI with the variance-minimizing scale on the augmentation term.
pub fn ppi_pp_estimate(data: &ObservedDataset, bank: &PredictorBank, level: f64) -> Result<EstimateReport> {
    let g = two_group(data, bank)?;
    let a = g.optimal_alpha();
    g.report("ppi_pp", a, data.len(), level)
}
