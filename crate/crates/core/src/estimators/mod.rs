//! Naive, PPI, PPI++ and augmented (PS, RAY, adaptive) estimators with
//! sandwich variances and Wald intervals.

mod baseline;
mod ibm;
mod terms;
mod tuning;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::ObservedDataset;
use crate::error::{Error, Result};
use crate::estfn::{self, SolveOptions, Theta};
use crate::lattice::SchemeKind;
use crate::predictors::PredictorBank;

pub use baseline::{naive_estimate, ppi_estimate, ppi_pp_estimate};
pub use ibm::{
    adaptive_program, adaptive_qp, cross_fit, estimate_g_l, fit_full, ibm_solve, split_folds, CrossFitOptions,
    FittedWeights, IbmFit, SplitPolicy, Weights,
};
pub use terms::CovarianceBlocks;
pub use tuning::{optimal_alpha, optimal_alpha_raw, ridge, AdaptiveProgram, AdaptiveSolution, GLEstimate};

use terms::Terms;

/// Linear functional `ℓ` applied to covariance matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scalarization {
    #[default]
    Trace,
    /// `cᵀΣc`.
    Contrast(Vec<f64>),
}

impl Scalarization {
    pub fn apply(&self, m: &DMatrix<f64>) -> f64 {
        match self {
            Scalarization::Trace => m.trace(),
            Scalarization::Contrast(c) => {
                let c = DVector::from_column_slice(c);
                c.dot(&(m * &c))
            }
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            Scalarization::Contrast(c) if c.len() != d => {
                Err(Error::InvalidConfig(format!("contrast has length {}, parameter has dimension {d}", c.len())))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cond_g: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub cond_g_folds: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub fold_thetas: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub fold_alphas: Vec<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constraint_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: String,
    pub n: usize,
    pub theta_hat: Vec<f64>,
    /// Covariance of `√N(θ̂ − θ⋆)`, row-major.
    pub sigma_hat: Vec<f64>,
    pub alpha: BTreeMap<String, f64>,
    pub level: f64,
    pub ci: Vec<[f64; 2]>,
    pub diagnostics: Diagnostics,
}

impl EstimateReport {
    pub fn dim(&self) -> usize {
        self.theta_hat.len()
    }

    pub fn theta(&self) -> Theta {
        DVector::from_column_slice(&self.theta_hat)
    }

    pub fn sigma(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.sigma_hat)
    }

    /// Estimated covariance of `θ̂` itself, `Σ̂/N`.
    pub fn variance(&self) -> DMatrix<f64> {
        self.sigma() / self.n as f64
    }
}

pub(crate) fn report(
    name: &str,
    theta: Theta,
    sigma: DMatrix<f64>,
    n: usize,
    alpha: BTreeMap<String, f64>,
    level: f64,
    diagnostics: Diagnostics,
) -> Result<EstimateReport> {
    let d = theta.len();
    let mut r = EstimateReport {
        estimator: name.to_string(),
        n,
        theta_hat: theta.iter().copied().collect(),
        sigma_hat: (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| sigma[(i, j)]).collect(),
        alpha,
        level,
        ci: Vec::new(),
        diagnostics,
    };
    r.ci = confidence_interval(&r, level)?;
    Ok(r)
}

/// Standard normal quantile `z_{1−a/2}` for level `1 − a`.
pub fn z_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidLevel(level));
    }
    Ok(Normal::standard().inverse_cdf(1.0 - (1.0 - level) / 2.0))
}

/// `θ̂_j ± z·sqrt(Σ̂_jj/N)`.
pub fn confidence_interval(report: &EstimateReport, level: f64) -> Result<Vec<[f64; 2]>> {
    let z = z_value(level)?;
    let d = report.dim();
    Ok((0..d)
        .map(|j| {
            let half = z * (report.sigma_hat[j * d + j].max(0.0) / report.n as f64).sqrt();
            [report.theta_hat[j] - half, report.theta_hat[j] + half]
        })
        .collect())
}

/// Root of the complete-case equation over rows observing the required
/// modalities.
pub(crate) fn naive_theta(terms: &Terms<'_>, rows: &[usize], opts: SolveOptions) -> Result<Theta> {
    let d = terms.dim();
    let req = terms.ef.required();
    let masks = terms.data.masks();
    let usable: Vec<usize> = rows.iter().copied().filter(|&i| masks[i].is_superset_of(req)).collect();
    if usable.len() < d + 1 {
        return Err(Error::InsufficientData(format!("{} usable rows for dimension {d}", usable.len())));
    }
    let n = usable.len() as f64;
    let residual = |theta: &Theta| -> Result<(DVector<f64>, DMatrix<f64>)> {
        let mut u = DVector::zeros(d);
        let mut j = DMatrix::zeros(d, d);
        for &i in &usable {
            let (v, jj) = terms.psi(i, theta)?;
            u += v;
            j += jj;
        }
        Ok((u / n, j / n))
    };
    let zero = Theta::zeros(d);
    if terms.ef.is_affine() {
        let (u0, j) = residual(&zero)?;
        estfn::solve_affine(&u0, &j, &zero)
    } else {
        estfn::solve_root(residual, zero, opts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Naive,
    Ppi,
    PpiPp,
    IbmPs,
    IbmRay,
    IbmAdaptive,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::Naive,
        EstimatorKind::Ppi,
        EstimatorKind::PpiPp,
        EstimatorKind::IbmPs,
        EstimatorKind::IbmRay,
        EstimatorKind::IbmAdaptive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Naive => "naive",
            EstimatorKind::Ppi => "ppi",
            EstimatorKind::PpiPp => "ppi_pp",
            EstimatorKind::IbmPs => "ibm_ps",
            EstimatorKind::IbmRay => "ibm_ray",
            EstimatorKind::IbmAdaptive => "ibm_adaptive",
        }
    }

    pub fn scheme(self) -> Option<SchemeKind> {
        match self {
            EstimatorKind::IbmPs => Some(SchemeKind::Ps),
            EstimatorKind::IbmRay => Some(SchemeKind::Ray),
            EstimatorKind::IbmAdaptive => Some(SchemeKind::Adaptive),
            _ => None,
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown estimator {s:?}")))
    }
}

/// Runs one estimator; augmented estimators are cross-fitted with the
/// scheme taken from `kind`.
pub fn run_estimator(
    kind: EstimatorKind,
    data: &ObservedDataset,
    bank: &PredictorBank,
    opts: &CrossFitOptions,
) -> Result<EstimateReport> {
    match kind {
        EstimatorKind::Naive => naive_estimate(data, bank.ef().as_ref(), opts.level),
        EstimatorKind::Ppi => ppi_estimate(data, bank, opts.level),
        EstimatorKind::PpiPp => ppi_pp_estimate(data, bank, opts.level),
        _ => {
            let mut o = opts.clone();
            o.scheme = kind.scheme().expect("augmented");
            cross_fit(data, bank, &o)
        }
    }
}
