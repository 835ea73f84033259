//! Augmented estimating equations, tuning fits and cross-fitting.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::ObservedDataset;
use crate::error::{Error, Result};
use crate::estfn::{self, SolveOptions, Theta};
use crate::lattice::{AdaptiveAlpha, OmegaTable, PatternTable, SchemeKind, WeightScheme};
use crate::linalg;
use crate::predictors::PredictorBank;
use crate::seed;

use super::terms::{CovarianceBlocks, Terms};
use super::tuning::{optimal_alpha, AdaptiveProgram, GLEstimate};
use super::{naive_theta, report, Diagnostics, EstimateReport, Scalarization};

/// Weighting with its tuning parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Weights {
    /// PS or RAY weights, the `k`-th augmented term scaled by `alpha[k]`.
    Tuned { scheme: SchemeKind, alpha: Vec<f64> },
    Adaptive(AdaptiveAlpha),
}

impl Weights {
    pub fn omega_table(&self, table: &PatternTable) -> Result<OmegaTable> {
        match self {
            Weights::Tuned { scheme, alpha } => {
                let ws = match scheme {
                    SchemeKind::Ps => WeightScheme::Ps,
                    SchemeKind::Ray => WeightScheme::Ray,
                    SchemeKind::Adaptive => {
                        return Err(Error::InvalidAlpha("adaptive weights need per-pair parameters".into()))
                    }
                };
                let k = table.augmented().len();
                if alpha.len() != k {
                    return Err(Error::InvalidAlpha(format!("expected {k} values, got {}", alpha.len())));
                }
                Ok(OmegaTable::new(&ws, table)?.scaled(alpha))
            }
            Weights::Adaptive(a) => OmegaTable::new(&WeightScheme::Adaptive(a.clone()), table),
        }
    }

    /// Tuning parameters keyed by pattern (`"110"`) or pair (`"100→110"`).
    pub fn labelled(&self, table: &PatternTable) -> Vec<(String, f64)> {
        match self {
            Weights::Tuned { alpha, .. } => {
                table.augmented().iter().zip(alpha).map(|(r, a)| (r.to_string(), *a)).collect()
            }
            Weights::Adaptive(a) => AdaptiveAlpha::variables(table)
                .into_iter()
                .map(|(r, s)| (format!("{r}→{s}"), a.get(r, s)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IbmFit {
    pub theta: Theta,
    /// Covariance of `√n(θ̂ − θ⋆)` for the `n` rows solved on.
    pub sigma: DMatrix<f64>,
    pub n: usize,
    pub blocks: CovarianceBlocks,
}

/// Solves the augmented estimating equation
/// `Σ_i [1{R_i=[M]}/π_M ψF(Z_i,θ) + Σ_r ω_r(R_i) F_r(X_{i,r},θ)] = 0` with
/// `π`, `λ` from `table`, and assembles the sandwich covariance.
pub fn ibm_solve(
    data: &ObservedDataset,
    bank: &PredictorBank,
    table: &PatternTable,
    weights: &Weights,
    opts: SolveOptions,
) -> Result<IbmFit> {
    let terms = Terms::new(data, bank.ef().as_ref(), Some(bank), table.augmented())?;
    let rows: Vec<usize> = (0..data.len()).collect();
    solve_rows(&terms, &rows, table, &weights.omega_table(table)?, opts)
}

pub(crate) fn solve_rows(
    terms: &Terms<'_>,
    rows: &[usize],
    table: &PatternTable,
    omega: &OmegaTable,
    opts: SolveOptions,
) -> Result<IbmFit> {
    let d = terms.dim();
    let masks = terms.data.masks();
    let pidx = rows
        .iter()
        .map(|&i| table.index_of(masks[i]).ok_or_else(|| Error::UnknownPattern(masks[i].to_string())))
        .collect::<Result<Vec<_>>>()?;
    let inv_pm = 1.0 / table.pi_full();
    let n = rows.len() as f64;
    let k = terms.aug.len();
    let residual = |theta: &Theta| -> Result<(DVector<f64>, DMatrix<f64>)> {
        let mut u = DVector::zeros(d);
        let mut jac = DMatrix::zeros(d, d);
        for (&i, &p) in rows.iter().zip(&pidx) {
            if masks[i].is_full() {
                let (v, j) = terms.psi(i, theta)?;
                u += v * inv_pm;
                jac += j * inv_pm;
            }
            for kk in 0..k {
                let w = omega.values[(p, kk)];
                if w != 0.0 {
                    let (f, j) = terms.proxy(i, kk, theta)?;
                    u += f * w;
                    jac += j * w;
                }
            }
        }
        Ok((u / n, jac / n))
    };
    let theta = if terms.ef.is_affine() {
        let zero = Theta::zeros(d);
        let (u0, j) = residual(&zero)?;
        estfn::solve_affine(&u0, &j, &zero)?
    } else {
        let pilot = naive_theta(terms, rows, opts)?;
        estfn::solve_root(residual, pilot, opts)?
    };
    let blocks = CovarianceBlocks::compute(terms, rows, &theta)?;
    let (gamma, eta) = omega.moments(table);
    let sigma = blocks.sandwich(&gamma, &eta, table.pi_full());
    Ok(IbmFit { theta, sigma, n: rows.len(), blocks })
}

/// Tuning parameters fitted on a set of rows.
#[derive(Debug, Clone)]
pub struct FittedWeights {
    pub weights: Weights,
    pub cond: f64,
    pub gain: f64,
    pub ridge: f64,
    pub constraint_residual: Option<f64>,
}

pub(crate) fn fit_weights(
    terms: &Terms<'_>,
    rows: &[usize],
    table: &PatternTable,
    scheme: SchemeKind,
    scal: &Scalarization,
    opts: SolveOptions,
) -> Result<FittedWeights> {
    let pilot = naive_theta(terms, rows, opts)?;
    let blocks = CovarianceBlocks::compute(terms, rows, &pilot)?;
    match scheme {
        SchemeKind::Ps | SchemeKind::Ray => {
            let gl = GLEstimate::from_blocks(&blocks, table, scheme, scal)?;
            let (alpha, gain) = optimal_alpha(&gl)?;
            Ok(FittedWeights {
                weights: Weights::Tuned { scheme, alpha: alpha.iter().copied().collect() },
                cond: gl.cond,
                gain,
                ridge: gl.ridge,
                constraint_residual: None,
            })
        }
        SchemeKind::Adaptive => {
            let program = AdaptiveProgram::from_blocks(&blocks, table, scal)?;
            let sol = program.solve(table)?;
            Ok(FittedWeights {
                weights: Weights::Adaptive(sol.alpha),
                cond: program.cond,
                gain: (program.c0 - sol.objective).max(0.0),
                ridge: program.ridge,
                constraint_residual: Some(sol.constraint_residual),
            })
        }
    }
}

/// G/L estimate on a dataset at its naive pilot.
pub fn estimate_g_l(
    data: &ObservedDataset,
    bank: &PredictorBank,
    table: &PatternTable,
    scheme: SchemeKind,
    scal: &Scalarization,
) -> Result<GLEstimate> {
    let terms = Terms::new(data, bank.ef().as_ref(), Some(bank), table.augmented())?;
    let rows: Vec<usize> = (0..data.len()).collect();
    let pilot = naive_theta(&terms, &rows, SolveOptions::default())?;
    let blocks = CovarianceBlocks::compute(&terms, &rows, &pilot)?;
    GLEstimate::from_blocks(&blocks, table, scheme, scal)
}

/// The adaptive program on a dataset at its naive pilot.
pub fn adaptive_program(
    data: &ObservedDataset,
    bank: &PredictorBank,
    table: &PatternTable,
    scal: &Scalarization,
) -> Result<AdaptiveProgram> {
    let terms = Terms::new(data, bank.ef().as_ref(), Some(bank), table.augmented())?;
    let rows: Vec<usize> = (0..data.len()).collect();
    let pilot = naive_theta(&terms, &rows, SolveOptions::default())?;
    let blocks = CovarianceBlocks::compute(&terms, &rows, &pilot)?;
    AdaptiveProgram::from_blocks(&blocks, table, scal)
}

/// Fits the adaptive tuning parameters and solves on the same data.
pub fn adaptive_qp(
    data: &ObservedDataset,
    bank: &PredictorBank,
    scal: &Scalarization,
) -> Result<(AdaptiveAlpha, IbmFit, f64)> {
    let table = data.pattern_table()?;
    let terms = Terms::new(data, bank.ef().as_ref(), Some(bank), table.augmented())?;
    let rows: Vec<usize> = (0..data.len()).collect();
    let fitted = fit_weights(&terms, &rows, &table, SchemeKind::Adaptive, scal, SolveOptions::default())?;
    let fit = solve_rows(&terms, &rows, &table, &fitted.weights.omega_table(&table)?, SolveOptions::default())?;
    let Weights::Adaptive(alpha) = fitted.weights else { unreachable!() };
    Ok((alpha, fit, fitted.constraint_residual.unwrap_or(0.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplitPolicy {
    /// Each pattern's rows are halved separately.
    #[default]
    Stratified,
    /// One random halving of all rows.
    Plain,
}

#[derive(Debug, Clone)]
pub struct CrossFitOptions {
    pub scheme: SchemeKind,
    pub scalarization: Scalarization,
    pub seed: u64,
    pub split: SplitPolicy,
    pub level: f64,
    pub solve: SolveOptions,
}

impl CrossFitOptions {
    pub fn new(scheme: SchemeKind, seed: u64) -> Self {
        Self {
            scheme,
            scalarization: Scalarization::Trace,
            seed,
            split: SplitPolicy::Stratified,
            level: 0.95,
            solve: SolveOptions::default(),
        }
    }
}

/// Two disjoint, sorted row-index folds. Every pattern must keep at least
/// two rows in each fold.
pub fn split_folds(data: &ObservedDataset, seed: u64, policy: SplitPolicy) -> Result<[Vec<usize>; 2]> {
    let mut folds: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    match policy {
        SplitPolicy::Stratified => {
            for (mask, mut idx) in data.indices_by_pattern() {
                idx.shuffle(&mut seed::rng(seed, &[seed::label("fold"), mask.bits() as u64]));
                let half = idx.len() / 2;
                folds[0].extend_from_slice(&idx[..half]);
                folds[1].extend_from_slice(&idx[half..]);
            }
        }
        SplitPolicy::Plain => {
            let mut idx: Vec<usize> = (0..data.len()).collect();
            idx.shuffle(&mut seed::rng(seed, &[seed::label("fold")]));
            let half = idx.len() / 2;
            folds[0].extend_from_slice(&idx[..half]);
            folds[1].extend_from_slice(&idx[half..]);
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    let masks = data.masks();
    for (mask, idx) in data.indices_by_pattern() {
        for (k, f) in folds.iter().enumerate() {
            let n = f.iter().filter(|&&i| masks[i] == mask).count();
            if n < 2 {
                return Err(Error::FoldDegenerate(format!(
                    "pattern {mask} ({} rows) has {n} rows in fold {}",
                    idx.len(),
                    k + 1
                )));
            }
        }
    }
    Ok(folds)
}

/// Two-fold cross-fitting: tuning is fitted on one fold and applied on the
/// other, then the two fold estimates are averaged. Pattern proportions come
/// from the whole dataset.
pub fn cross_fit(data: &ObservedDataset, bank: &PredictorBank, opts: &CrossFitOptions) -> Result<EstimateReport> {
    let table = data.pattern_table()?;
    let terms = Terms::new(data, bank.ef().as_ref(), Some(bank), table.augmented())?;
    let folds = split_folds(data, opts.seed, opts.split)?;
    let d = terms.dim();
    let mut thetas = Vec::new();
    let mut var = DMatrix::zeros(d, d);
    let mut fitted = Vec::new();
    for k in 0..2 {
        let fw = fit_weights(&terms, &folds[k], &table, opts.scheme, &opts.scalarization, opts.solve)?;
        let fit = solve_rows(&terms, &folds[1 - k], &table, &fw.weights.omega_table(&table)?, opts.solve)?;
        var += &fit.sigma / fit.n as f64;
        thetas.push(fit.theta);
        fitted.push(fw);
    }
    let theta = (&thetas[0] + &thetas[1]) / 2.0;
    let n = data.len();
    let sigma = linalg::symmetrize(&(var * (n as f64 / 4.0)));

    let labelled: Vec<Vec<(String, f64)>> = fitted.iter().map(|f| f.weights.labelled(&table)).collect();
    let alpha = labelled[0]
        .iter()
        .zip(&labelled[1])
        .map(|((name, a), (_, b))| (name.clone(), (a + b) / 2.0))
        .collect();
    let diagnostics = Diagnostics {
        cond_g: Some(fitted.iter().map(|f| f.cond).sum::<f64>() / 2.0),
        cond_g_folds: fitted.iter().map(|f| f.cond).collect(),
        gain: Some(fitted.iter().map(|f| f.gain).sum::<f64>() / 2.0),
        ridge: Some(fitted.iter().map(|f| f.ridge).fold(0.0, f64::max)),
        fold_thetas: thetas.iter().map(|t| t.iter().copied().collect()).collect(),
        fold_alphas: labelled.into_iter().map(|l| l.into_iter().collect()).collect(),
        constraint_residual: fitted
            .iter()
            .filter_map(|f| f.constraint_residual)
            .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r)))),
    };
    let name = match opts.scheme {
        SchemeKind::Ps => "ibm_ps",
        SchemeKind::Ray => "ibm_ray",
        SchemeKind::Adaptive => "ibm_adaptive",
    };
    report(name, theta, sigma, n, alpha, opts.level, diagnostics)
}

/// Fits tuning and solves on the full dataset, without sample splitting.
pub fn fit_full(data: &ObservedDataset, bank: &PredictorBank, opts: &CrossFitOptions) -> Result<EstimateReport> {
    let table = data.pattern_table()?;
    let terms = Terms::new(data, bank.ef().as_ref(), Some(bank), table.augmented())?;
    let rows: Vec<usize> = (0..data.len()).collect();
    let fw = fit_weights(&terms, &rows, &table, opts.scheme, &opts.scalarization, opts.solve)?;
    let fit = solve_rows(&terms, &rows, &table, &fw.weights.omega_table(&table)?, opts.solve)?;
    let diagnostics = Diagnostics {
        cond_g: Some(fw.cond),
        cond_g_folds: Vec::new(),
        gain: Some(fw.gain),
        ridge: Some(fw.ridge),
        fold_thetas: Vec::new(),
        fold_alphas: Vec::new(),
        constraint_residual: fw.constraint_residual,
    };
    let name = match opts.scheme {
        SchemeKind::Ps => "ibm_ps_full",
        SchemeKind::Ray => "ibm_ray_full",
        SchemeKind::Adaptive => "ibm_adaptive_full",
    };
    report(name, fit.theta, fit.sigma, data.len(), fw.weights.labelled(&table).into_iter().collect(), opts.level, diagnostics)
}
