//! Seeded replications with per-estimator RMSE, coverage, interval width and
//! variance-trace metrics.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{run_estimator, CrossFitOptions, EstimatorKind, Scalarization, SplitPolicy};
use crate::lattice::SchemeKind;
use crate::predictors::{Imputer, PredictorBank};
use crate::seed;

use super::{generate, mean_bank, moment_bank, noisy_mean_predictors, trained_mean_predictors, DgpConfig};

/// Where each replication's predictors come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BankSpec {
    /// Linear `f`, `g` fitted once on `train_n` rows of the correctly
    /// specified design.
    Trained { train_n: usize },
    /// Noisy mixtures of the oracle predictors, fresh noise per replication.
    Oracle { q: f64 },
    /// Exact Gaussian conditional moments (expectation mode).
    Moments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub label: String,
    pub dgp: DgpConfig,
    pub bank: BankSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Worker threads; `0` uses the global default.
    pub jobs: usize,
    pub level: f64,
    pub scalarization: Scalarization,
    pub split: SplitPolicy,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { jobs: 0, level: 0.95, scalarization: Scalarization::Trace, split: SplitPolicy::Stratified }
    }
}

/// One estimator on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub estimator: String,
    pub theta_hat: Vec<f64>,
    pub ci: Vec<[f64; 2]>,
    /// `tr(Σ̂)/N`.
    pub trace: f64,
    pub cond_g: Option<f64>,
    pub error: Option<String>,
}

impl RepRecord {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn squared_error(&self, theta_star: &[f64]) -> f64 {
        self.theta_hat.iter().zip(theta_star).map(|(a, b)| (a - b).powi(2)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub estimator: String,
    pub reps: usize,
    pub failures: usize,
    /// `sqrt(mean ‖θ̂ − θ⋆‖²)`.
    pub rmse: f64,
    /// Delta-method standard error of `rmse`.
    pub rmse_se: f64,
    /// Fraction of (replication, coordinate) intervals covering `θ⋆`.
    pub coverage: f64,
    pub mean_ci_width: f64,
    /// Mean of `tr(Σ̂)/N`.
    pub mean_trace: f64,
    pub mean_cond_g: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub seed: u64,
    pub n_reps: usize,
    pub rows: Vec<MetricsRow>,
    #[serde(skip)]
    pub records: Vec<(String, Vec<f64>, Vec<RepRecord>)>,
}

impl MetricsTable {
    pub fn row(&self, scenario: &str, estimator: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.scenario == scenario && r.estimator == estimator)
    }

    /// Successful records for one scenario and estimator, with `θ⋆`.
    pub fn records_for(&self, scenario: &str, estimator: &str) -> Option<(&[f64], Vec<&RepRecord>)> {
        self.records
            .iter()
            .find(|(s, _, _)| s == scenario)
            .map(|(_, t, recs)| (t.as_slice(), recs.iter().filter(|r| r.estimator == estimator).collect()))
    }

    pub fn extend(&mut self, other: MetricsTable) {
        self.rows.extend(other.rows);
        self.records.extend(other.records);
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        }
        wr.flush().map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

fn bank_for_rep(scenario: &Scenario, trained: Option<&BankParts>, rep_seed: u64) -> Result<PredictorBank> {
    let dgp = &scenario.dgp;
    let schema = Arc::new(dgp.schema()?);
    let ef = dgp.estimating_function(&schema)?;
    match &scenario.bank {
        BankSpec::Trained { .. } => {
            let (f, g) = trained.expect("trained predictors");
            mean_bank(schema, ef, f.clone(), g.clone())
        }
        BankSpec::Oracle { q } => {
            let (f, g) = noisy_mean_predictors(dgp, *q, seed::derive(rep_seed, &[seed::label("noise")]))?;
            mean_bank(schema, ef, f, g)
        }
        BankSpec::Moments => moment_bank(dgp, schema, ef),
    }
}

type BankParts = (Arc<dyn Imputer>, Arc<dyn Imputer>);

/// The predictor bank a single run of `scenario` would use: trained
/// predictors are fitted with `derive(seed, label("train"))` and oracle noise
/// is keyed by `seed`.
pub fn scenario_bank(scenario: &Scenario, seed: u64) -> Result<PredictorBank> {
    let trained = match scenario.bank {
        BankSpec::Trained { train_n } => {
            Some(trained_mean_predictors(&scenario.dgp, train_n, seed::derive(seed, &[seed::label("train")]))?)
        }
        _ => None,
    };
    bank_for_rep(scenario, trained.as_ref(), seed)
}

fn one_rep(
    scenario: &Scenario,
    trained: Option<&BankParts>,
    estimators: &[EstimatorKind],
    rep: usize,
    seed: u64,
    opts: &RunOptions,
) -> Vec<RepRecord> {
    let rep_seed = seed::derive(seed, &[rep as u64]);
    let fail = |e: &Error| {
        estimators
            .iter()
            .map(|k| RepRecord {
                rep,
                estimator: k.name().to_string(),
                theta_hat: Vec::new(),
                ci: Vec::new(),
                trace: f64::NAN,
                cond_g: None,
                error: Some(e.to_string()),
            })
            .collect()
    };
    let mut dgp = scenario.dgp.clone();
    dgp.seed = rep_seed;
    let data = match generate(&dgp) {
        Ok(d) => d.data,
        Err(e) => return fail(&e),
    };
    let bank = match bank_for_rep(scenario, trained, rep_seed) {
        Ok(b) => b,
        Err(e) => return fail(&e),
    };
    let mut cf = CrossFitOptions::new(SchemeKind::Ps, seed::derive(rep_seed, &[seed::label("folds")]));
    cf.level = opts.level;
    cf.scalarization = opts.scalarization.clone();
    cf.split = opts.split;
    estimators
        .iter()
        .map(|&k| match run_estimator(k, &data, &bank, &cf) {
            Ok(r) => {
                let d = r.dim();
                let trace = (0..d).map(|j| r.sigma_hat[j * d + j]).sum::<f64>() / r.n as f64;
                RepRecord {
                    rep,
                    estimator: k.name().to_string(),
                    theta_hat: r.theta_hat,
                    ci: r.ci,
                    trace,
                    cond_g: r.diagnostics.cond_g,
                    error: None,
                }
            }
            Err(e) => RepRecord {
                rep,
                estimator: k.name().to_string(),
                theta_hat: Vec::new(),
                ci: Vec::new(),
                trace: f64::NAN,
                cond_g: None,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

fn summarize(scenario: &str, estimator: &str, theta_star: &[f64], recs: &[&RepRecord]) -> MetricsRow {
    let ok: Vec<&&RepRecord> = recs.iter().filter(|r| r.ok()).collect();
    let n = ok.len() as f64;
    let sq: Vec<f64> = ok.iter().map(|r| r.squared_error(theta_star)).collect();
    let mse = sq.iter().sum::<f64>() / n;
    let sd_sq = (sq.iter().map(|s| (s - mse).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let rmse = mse.sqrt();
    let d = theta_star.len() as f64;
    let (mut covered, mut width) = (0.0, 0.0);
    for r in &ok {
        for (ci, t) in r.ci.iter().zip(theta_star) {
            if ci[0] <= *t && *t <= ci[1] {
                covered += 1.0;
            }
            width += ci[1] - ci[0];
        }
    }
    let conds: Vec<f64> = ok.iter().filter_map(|r| r.cond_g).collect();
    MetricsRow {
        scenario: scenario.to_string(),
        estimator: estimator.to_string(),
        reps: recs.len(),
        failures: recs.len() - ok.len(),
        rmse,
        rmse_se: if rmse > 0.0 { sd_sq / n.sqrt() / (2.0 * rmse) } else { 0.0 },
        coverage: covered / (n * d),
        mean_ci_width: width / (n * d),
        mean_trace: ok.iter().map(|r| r.trace).sum::<f64>() / n,
        mean_cond_g: if conds.is_empty() { None } else { Some(conds.iter().sum::<f64>() / conds.len() as f64) },
    }
}

/// Runs `n_reps` replications of `scenario`. Replication `i` uses seed
/// `derive(seed, [i])`; results do not depend on `opts.jobs`. More than 1%
/// failed replications for any estimator fails the run.
pub fn run_replications(
    scenario: &Scenario,
    estimators: &[EstimatorKind],
    n_reps: usize,
    seed: u64,
    opts: &RunOptions,
) -> Result<MetricsTable> {
    if n_reps == 0 {
        return Err(Error::InvalidConfig("at least one replication is required".into()));
    }
    if estimators.is_empty() {
        return Err(Error::InvalidConfig("no estimators requested".into()));
    }
    scenario.dgp.validate()?;
    let trained = match scenario.bank {
        BankSpec::Trained { train_n } => {
            Some(trained_mean_predictors(&scenario.dgp, train_n, seed::derive(seed, &[seed::label("train")]))?)
        }
        _ => None,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let per_rep: Vec<Vec<RepRecord>> = pool.install(|| {
        (0..n_reps)
            .into_par_iter()
            .map(|rep| one_rep(scenario, trained.as_ref(), estimators, rep, seed, opts))
            .collect()
    });
    let records: Vec<RepRecord> = per_rep.into_iter().flatten().collect();
    let theta_star = scenario.dgp.theta_star();
    let mut rows = Vec::new();
    for k in estimators {
        let recs: Vec<&RepRecord> = records.iter().filter(|r| r.estimator == k.name()).collect();
        let failed = recs.iter().filter(|r| !r.ok()).count();
        if failed * 100 > n_reps {
            return Err(Error::TooManyFailures { failed, total: n_reps });
        }
        rows.push(summarize(&scenario.label, k.name(), &theta_star, &recs));
    }
    Ok(MetricsTable { seed, n_reps, rows, records: vec![(scenario.label.clone(), theta_star, records)] })
}

/// Naive, PPI++ and the three augmented estimators over a grid of
/// predictor qualities `q`, with `n_labeled` rows in each labeled pattern.
pub fn quality_sweep(
    q_grid: &[f64],
    n_labeled: usize,
    n_unlabeled: usize,
    n_reps: usize,
    seed: u64,
    opts: &RunOptions,
) -> Result<MetricsTable> {
    let estimators = [
        EstimatorKind::Naive,
        EstimatorKind::PpiPp,
        EstimatorKind::IbmPs,
        EstimatorKind::IbmRay,
        EstimatorKind::IbmAdaptive,
    ];
    let mut out: Option<MetricsTable> = None;
    for (i, &q) in q_grid.iter().enumerate() {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::InvalidQ(q));
        }
        let scenario = Scenario {
            label: format!("q={q}"),
            dgp: DgpConfig::mean41(n_labeled, n_unlabeled, false),
            bank: BankSpec::Oracle { q },
        };
        let t = run_replications(&scenario, &estimators, n_reps, seed::derive(seed, &[i as u64]), opts)?;
        match &mut out {
            Some(o) => o.extend(t),
            None => out = Some(t),
        }
    }
    out.ok_or_else(|| Error::InvalidConfig("empty q grid".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario() -> Scenario {
        Scenario { label: "small".into(), dgp: DgpConfig::mean41(40, 80, false), bank: BankSpec::Oracle { q: 0.5 } }
    }

    #[test]
    fn jobs_do_not_change_results() {
        let ks = [EstimatorKind::Naive, EstimatorKind::IbmAdaptive];
        let one = RunOptions { jobs: 1, ..RunOptions::default() };
        let four = RunOptions { jobs: 4, ..RunOptions::default() };
        let a = run_replications(&scenario(), &ks, 6, 11, &one).unwrap();
        let b = run_replications(&scenario(), &ks, 6, 11, &four).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn single_rep_matches_direct_run() {
        let ks = [EstimatorKind::Naive];
        let t = run_replications(&scenario(), &ks, 1, 5, &RunOptions::default()).unwrap();
        let mut dgp = scenario().dgp;
        dgp.seed = seed::derive(5, &[0]);
        let data = generate(&dgp).unwrap().data;
        let schema = Arc::new(dgp.schema().unwrap());
        let ef = dgp.estimating_function(&schema).unwrap();
        let r = crate::estimators::naive_estimate(&data, ef.as_ref(), 0.95).unwrap();
        let row = t.row("small", "naive").unwrap();
        assert!((row.rmse - (r.theta_hat[0] - 30.0).abs()).abs() < 1e-12);
        assert_eq!(row.reps, 1);
        assert!((row.mean_ci_width - (r.ci[0][1] - r.ci[0][0])).abs() < 1e-12);
    }

    #[test]
    fn csv_has_one_row_per_estimator() {
        let ks = [EstimatorKind::Naive, EstimatorKind::PpiPp];
        let t = run_replications(&scenario(), &ks, 2, 1, &RunOptions::default()).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), 3);
        assert!(s.starts_with("scenario,estimator,reps,failures,rmse"));
    }
}
