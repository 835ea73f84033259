//! Synthetic designs, predictor banks built from them, the exact remainder
//! study, and the replication harness.

mod discrete;
mod harness;
mod remainder;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{ObservedDataset, Schema};
use crate::error::{Error, Result};
use crate::estfn::{EstimatingFunction, MeanEf, OlsEf};
use crate::lattice::PatternMask;
use crate::predictors::{
    noisy_mixture_predictor, ols_conditional_moments, train_linear_predictor, GaussianSpec, Imputer, JointModel,
    LinearModel, ObservedOnly, PredictionMode, Predictor, PredictorBank, DEFAULT_NOISE_SD,
};
use crate::seed;

pub use discrete::{decomposition_error, ray_components, DiscreteLaw};
pub use harness::{quality_sweep, run_replications, scenario_bank, BankSpec, MetricsRow, MetricsTable, RepRecord, RunOptions, Scenario};
pub use remainder::{remainder_study, ExactRemainder, McOptions, RemainderRow, RemainderStudy, Term};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpKind {
    /// `X1 ~ N(1, I)`, `X2 ~ N(1, I)`, `Y = 1ᵀX1 + 1ᵀX2 + ε`; mean target.
    Mean41,
    /// `X ~ N(0, Σ)` with unit variances and constant correlation,
    /// `Y = 1ᵀX + ε`; OLS target.
    Ols42,
    /// Scalar `(X1, X2, Y)` with exchangeable correlation; mean target.
    Exchangeable3d,
}

/// Rows per observed pattern over the modalities `(x1, x2, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternCounts {
    pub complete: usize,
    pub x1_y: usize,
    pub x1_x2: usize,
    pub x1: usize,
}

impl PatternCounts {
    pub fn total(&self) -> usize {
        self.complete + self.x1_y + self.x1_x2 + self.x1
    }

    fn blocks(&self) -> [(&'static str, usize); 4] {
        [("111", self.complete), ("101", self.x1_y), ("110", self.x1_x2), ("100", self.x1)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub kind: DgpKind,
    /// Columns in `x1` and `x2`.
    pub p1: usize,
    pub p2: usize,
    /// Off-diagonal correlation (OLS and exchangeable designs).
    #[serde(default)]
    pub rho: f64,
    #[serde(default = "one")]
    pub noise_sd: f64,
    /// Adds `Σ X1²` to the outcome of the mean design.
    #[serde(default)]
    pub misspecified: bool,
    pub counts: PatternCounts,
    /// Draw each row's pattern with probabilities proportional to `counts`
    /// instead of using the counts exactly.
    #[serde(default)]
    pub multinomial: bool,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl DgpConfig {
    /// The mean design with `n_labeled` rows in each of `111`, `101` and
    /// `n_unlabeled` rows in each of `110`, `100`.
    pub fn mean41(n_labeled: usize, n_unlabeled: usize, misspecified: bool) -> Self {
        Self {
            kind: DgpKind::Mean41,
            p1: 10,
            p2: 20,
            rho: 0.0,
            noise_sd: 1.0,
            misspecified,
            counts: PatternCounts { complete: n_labeled, x1_y: n_labeled, x1_x2: n_unlabeled, x1: n_unlabeled },
            multinomial: false,
            seed: 0,
        }
    }

    pub fn ols42(n_complete: usize, n_incomplete: usize) -> Self {
        Self {
            kind: DgpKind::Ols42,
            p1: 2,
            p2: 2,
            rho: 0.4,
            noise_sd: 1.0,
            misspecified: false,
            counts: PatternCounts { complete: n_complete, x1_y: n_incomplete, x1_x2: n_incomplete, x1: n_incomplete },
            multinomial: false,
            seed: 0,
        }
    }

    pub fn exchangeable3d(rho: f64, counts: PatternCounts) -> Self {
        Self {
            kind: DgpKind::Exchangeable3d,
            p1: 1,
            p2: 1,
            rho,
            noise_sd: 0.0,
            misspecified: false,
            counts,
            multinomial: false,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.p1 == 0 || self.p2 == 0 {
            return bad("x1 and x2 need at least one column".into());
        }
        if self.kind == DgpKind::Exchangeable3d && (self.p1 != 1 || self.p2 != 1) {
            return bad("the exchangeable design has scalar x1 and x2".into());
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return bad(format!("noise_sd must be finite and non-negative, got {}", self.noise_sd));
        }
        if self.counts.complete == 0 {
            return bad("at least one complete row is required".into());
        }
        match self.kind {
            DgpKind::Mean41 => Ok(()),
            DgpKind::Ols42 => exchangeable_check(self.rho, self.p1 + self.p2),
            DgpKind::Exchangeable3d => exchangeable_check(self.rho, 3),
        }
    }

    pub fn schema(&self) -> Result<Schema> {
        Schema::with_sizes(&[("x1", self.p1), ("x2", self.p2), ("y", 1)])
    }

    /// Estimating function of the design's target.
    pub fn estimating_function(&self, schema: &Schema) -> Result<Arc<dyn EstimatingFunction>> {
        Ok(match self.kind {
            DgpKind::Mean41 | DgpKind::Exchangeable3d => Arc::new(MeanEf::new(schema, "y")?),
            DgpKind::Ols42 => {
                let covs: Vec<&str> = schema.column_names().filter(|&c| c != "y").collect();
                Arc::new(OlsEf::new(schema, &covs, "y")?)
            }
        })
    }

    /// The target `θ⋆` implied by the design.
    pub fn theta_star(&self) -> Vec<f64> {
        match self.kind {
            // E[X²] = 2 for X ~ N(1, 1).
            DgpKind::Mean41 => {
                let base = (self.p1 + self.p2) as f64;
                vec![if self.misspecified { base + 2.0 * self.p1 as f64 } else { base }]
            }
            DgpKind::Ols42 => vec![1.0; self.p1 + self.p2],
            DgpKind::Exchangeable3d => vec![0.0],
        }
    }

    /// Joint Gaussian law of all columns, when the design has one.
    pub fn gaussian_spec(&self) -> Result<Option<GaussianSpec>> {
        let p = self.p1 + self.p2;
        let cols: Vec<usize> = (0..=p).collect();
        match self.kind {
            DgpKind::Mean41 if self.misspecified => Ok(None),
            DgpKind::Mean41 => {
                let mut mean = DVector::from_element(p + 1, 1.0);
                mean[p] = p as f64;
                let mut cov = DMatrix::identity(p + 1, p + 1);
                for j in 0..p {
                    cov[(j, p)] = 1.0;
                    cov[(p, j)] = 1.0;
                }
                cov[(p, p)] = p as f64 + self.noise_sd.powi(2);
                GaussianSpec::new(cols, mean, cov).map(Some)
            }
            DgpKind::Ols42 => {
                let sx = exchangeable(p, self.rho);
                let sxy = &sx * DVector::from_element(p, 1.0);
                let mut cov = DMatrix::zeros(p + 1, p + 1);
                cov.view_mut((0, 0), (p, p)).copy_from(&sx);
                for j in 0..p {
                    cov[(j, p)] = sxy[j];
                    cov[(p, j)] = sxy[j];
                }
                cov[(p, p)] = sxy.sum() + self.noise_sd.powi(2);
                GaussianSpec::new(cols, DVector::zeros(p + 1), cov).map(Some)
            }
            DgpKind::Exchangeable3d => GaussianSpec::new(cols, DVector::zeros(3), exchangeable(3, self.rho)).map(Some),
        }
    }
}

fn exchangeable(k: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { rho })
}

pub(crate) fn exchangeable_check(rho: f64, k: usize) -> Result<()> {
    let lo = -1.0 / (k as f64 - 1.0);
    if rho.is_finite() && rho > lo && rho < 1.0 {
        Ok(())
    } else {
        Err(Error::NotPositiveDefinite(format!("correlation {rho} for {k} exchangeable variables")))
    }
}

/// A generated dataset and the target it was drawn around.
#[derive(Debug, Clone)]
pub struct SimData {
    pub data: ObservedDataset,
    pub theta_star: Vec<f64>,
}

/// Draws rows i.i.d. from the design and masks them. Values and masks come
/// from separate streams, so the missingness is independent of the values.
pub fn generate(config: &DgpConfig) -> Result<SimData> {
    config.validate()?;
    let schema = Arc::new(config.schema()?);
    let n = config.counts.total();
    let masks = assign_masks(config)?;
    let mut data = ObservedDataset::with_capacity(schema.clone(), n);
    let mut rng = seed::rng(config.seed, &[seed::label("rows")]);
    let p = config.p1 + config.p2;
    let chol = match config.kind {
        DgpKind::Mean41 => None,
        DgpKind::Ols42 => Some(cholesky(&exchangeable(p, config.rho))?),
        DgpKind::Exchangeable3d => Some(cholesky(&exchangeable(3, config.rho))?),
    };
    let mut z = vec![0.0; p + 1];
    for (i, mask) in masks.into_iter().enumerate() {
        match config.kind {
            DgpKind::Mean41 => {
                let mut y = 0.0;
                for v in z.iter_mut().take(p) {
                    *v = 1.0 + rng.sample::<f64, _>(StandardNormal);
                    y += *v;
                }
                if config.misspecified {
                    y += z[..config.p1].iter().map(|x| x * x).sum::<f64>();
                }
                z[p] = y + config.noise_sd * rng.sample::<f64, _>(StandardNormal);
            }
            DgpKind::Ols42 => {
                let e = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
                let x = chol.as_ref().expect("ols") * e;
                z[..p].copy_from_slice(x.as_slice());
                z[p] = x.sum() + config.noise_sd * rng.sample::<f64, _>(StandardNormal);
            }
            DgpKind::Exchangeable3d => {
                let e = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
                z.copy_from_slice((chol.as_ref().expect("exch") * e).as_slice());
            }
        }
        data.push_masked(i as u64, &z, mask);
    }
    Ok(SimData { data, theta_star: config.theta_star() })
}

fn cholesky(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(m.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite("design covariance".into()))?.l())
}

fn assign_masks(config: &DgpConfig) -> Result<Vec<PatternMask>> {
    let blocks = config.counts.blocks();
    let masks: Vec<(PatternMask, usize)> =
        blocks.iter().map(|&(s, n)| Ok((s.parse::<PatternMask>()?, n))).collect::<Result<_>>()?;
    if !config.multinomial {
        return Ok(masks.iter().flat_map(|&(m, n)| std::iter::repeat_n(m, n)).collect());
    }
    let total = config.counts.total() as f64;
    let mut rng = seed::rng(config.seed, &[seed::label("masks")]);
    Ok((0..config.counts.total())
        .map(|_| {
            let u: f64 = rng.random::<f64>() * total;
            let mut acc = 0.0;
            for &(m, n) in &masks {
                acc += n as f64;
                if u < acc {
                    return m;
                }
            }
            masks[0].0
        })
        .collect())
}

fn mask(s: &str) -> PatternMask {
    s.parse().expect("static mask")
}

/// Imputation-mode bank for a mean target: `f` on `100`, `g` on `110`, and
/// the observed outcome on `101`.
pub fn mean_bank(
    schema: Arc<Schema>,
    ef: Arc<dyn EstimatingFunction>,
    f: Arc<dyn Imputer>,
    g: Arc<dyn Imputer>,
) -> Result<PredictorBank> {
    PredictorBank::new(PredictionMode::Imputation, ef, schema)
        .with(mask("100"), Predictor::Imputer(f))?
        .with(mask("110"), Predictor::Imputer(g))?
        .with(mask("101"), Predictor::Imputer(Arc::new(ObservedOnly)))
}

/// Linear `f(X1)` and `g(X1, X2)` fitted on `train_n` complete rows from the
/// correctly specified version of `config`.
pub fn trained_mean_predictors(
    config: &DgpConfig,
    train_n: usize,
    seed: u64,
) -> Result<(Arc<dyn Imputer>, Arc<dyn Imputer>)> {
    let mut train = config.clone();
    train.misspecified = false;
    train.multinomial = false;
    train.counts = PatternCounts { complete: train_n, x1_y: 0, x1_x2: 0, x1: 0 };
    train.seed = seed;
    let data = generate(&train)?.data;
    let y = mask("001");
    let f = train_linear_predictor(&data, mask("100"), y)?;
    let g = train_linear_predictor(&data, mask("110"), y)?;
    Ok((Arc::new(f), Arc::new(g)))
}

/// `E[Y | X1]` and `E[Y | X1, X2]` under the correctly specified design.
pub fn oracle_mean_predictors(config: &DgpConfig) -> Result<(Arc<dyn Imputer>, Arc<dyn Imputer>)> {
    let (p1, p2) = (config.p1, config.p2);
    let y = p1 + p2;
    let (f_coef, g_coef) = match config.kind {
        DgpKind::Mean41 => {
            let mut f = vec![p2 as f64];
            f.extend(std::iter::repeat_n(1.0, p1));
            let mut g = vec![0.0];
            g.extend(std::iter::repeat_n(1.0, p1 + p2));
            (f, g)
        }
        DgpKind::Exchangeable3d => {
            let r = config.rho;
            let b = r / (1.0 + r);
            (vec![0.0, r], vec![0.0, b, b])
        }
        DgpKind::Ols42 => return Err(Error::NotMeanTarget),
    };
    let f = LinearModel::from_coefficients((0..p1).collect(), vec![y], DMatrix::from_column_slice(p1 + 1, 1, &f_coef))?;
    let g = LinearModel::from_coefficients((0..y).collect(), vec![y], DMatrix::from_column_slice(y + 1, 1, &g_coef))?;
    Ok((Arc::new(f), Arc::new(g)))
}

/// `(1 − q)·oracle + q·ε` versions of the oracle predictors, with noise
/// streams keyed by `seed`.
pub fn noisy_mean_predictors(
    config: &DgpConfig,
    q: f64,
    seed: u64,
) -> Result<(Arc<dyn Imputer>, Arc<dyn Imputer>)> {
    let (f, g) = oracle_mean_predictors(config)?;
    let fq = noisy_mixture_predictor(f, q, DEFAULT_NOISE_SD, seed::derive(seed, &[seed::label("f")]))?;
    let gq = noisy_mixture_predictor(g, q, DEFAULT_NOISE_SD, seed::derive(seed, &[seed::label("g")]))?;
    Ok((Arc::new(fq), Arc::new(gq)))
}

/// Expectation-mode bank with exact Gaussian conditional moments on every
/// incomplete pattern of the design.
pub fn moment_bank(config: &DgpConfig, schema: Arc<Schema>, ef: Arc<dyn EstimatingFunction>) -> Result<PredictorBank> {
    let spec = config
        .gaussian_spec()?
        .ok_or_else(|| Error::NonGaussianSpec("design has no gaussian law".into()))?;
    let model = JointModel::Gaussian(spec);
    let mut bank = PredictorBank::new(PredictionMode::Expectation, ef.clone(), schema.clone());
    for s in ["110", "101", "100"] {
        let r = mask(s);
        bank.insert(r, Predictor::Expectation(ols_conditional_moments(&model, ef.clone(), r, &schema, 0)?))?;
    }
    Ok(bank)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn targets_follow_the_design() {
        assert_eq!(DgpConfig::mean41(10, 10, false).theta_star(), vec![30.0]);
        assert_eq!(DgpConfig::mean41(10, 10, true).theta_star(), vec![50.0]);
        assert_eq!(DgpConfig::ols42(10, 10).theta_star(), vec![1.0; 4]);
    }

    #[test]
    fn counts_and_determinism() {
        let c = DgpConfig::mean41(7, 11, false).with_seed(3);
        let a = generate(&c).unwrap().data;
        let b = generate(&c).unwrap().data;
        let t = a.pattern_table().unwrap();
        assert_eq!(t.counts().unwrap().iter().sum::<u64>(), 36);
        assert_eq!(t.pi(mask("111")), Some(7.0 / 36.0));
        assert_eq!(a.masks(), b.masks());
        let av: Vec<f64> = a.rows().flat_map(|r| r.values.to_vec()).collect();
        let bv: Vec<f64> = b.rows().flat_map(|r| r.values.to_vec()).collect();
        assert_eq!(format!("{av:?}"), format!("{bv:?}"));
    }

    #[test]
    fn masks_do_not_depend_on_values() {
        let mut c = DgpConfig::mean41(50, 50, false).with_seed(9);
        c.multinomial = true;
        let a = generate(&c).unwrap().data;
        c.misspecified = true;
        c.noise_sd = 5.0;
        let b = generate(&c).unwrap().data;
        assert_eq!(a.masks(), b.masks());
    }

    #[test]
    fn sample_moments_match_the_design() {
        let c = DgpConfig::mean41(20_000, 0, true).with_seed(1);
        let d = generate(&c).unwrap().data;
        let n = d.len() as f64;
        let ys: Vec<f64> = d.rows().map(|r| r.values[30]).collect();
        let m = ys.iter().sum::<f64>() / n;
        let sd = (ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / n).sqrt();
        assert!((m - 50.0).abs() < 4.0 * sd / n.sqrt(), "mean {m}");

        let c = DgpConfig::ols42(20_000, 0).with_seed(2);
        let d = generate(&c).unwrap().data;
        let x01 = d.rows().map(|r| r.values[0] * r.values[1]).sum::<f64>() / 20_000.0;
        assert!((x01 - 0.4).abs() < 0.04, "{x01}");
    }

    #[test]
    fn invalid_designs_are_rejected() {
        let mut c = DgpConfig::ols42(10, 10);
        c.rho = -0.5;
        assert!(matches!(generate(&c), Err(Error::NotPositiveDefinite(_))));
        let mut c = DgpConfig::mean41(0, 10, false);
        assert!(matches!(generate(&c), Err(Error::InvalidConfig(_))));
        c.counts.complete = 3;
        c.noise_sd = f64::NAN;
        assert!(matches!(generate(&c), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn oracle_predictor_is_the_conditional_mean() {
        // Under the gaussian spec, E[Y | X1] from the conditional law equals
        // the closed-form oracle.
        let c = DgpConfig::exchangeable3d(0.3, PatternCounts { complete: 5, x1_y: 0, x1_x2: 0, x1: 0 });
        let schema = c.schema().unwrap();
        let spec = c.gaussian_spec().unwrap().unwrap();
        let (f, g) = oracle_mean_predictors(&c).unwrap();
        let data = generate(&c.clone().with_seed(4)).unwrap().data;
        for row in data.rows() {
            for (pred, r) in [(&f, "100"), (&g, "110")] {
                let cond = crate::predictors::GaussianConditional::new(&spec, mask(r), &schema).unwrap();
                let m = cond.conditional_mean(row).unwrap()[2];
                assert!((pred.predict(row).unwrap()[0] - m).abs() < 1e-12);
            }
        }
    }
}
