//! JSON run configuration and the shipped presets.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use blockwise::estimators::{EstimatorKind, Scalarization, SplitPolicy};
use blockwise::predictors::{FileExpectation, FileImputer, ObservedOnly, PredictionMode, Predictor, PredictorBank};
use blockwise::simulation::{generate, scenario_bank, BankSpec, DgpConfig, DgpKind, Scenario};
use blockwise::{EstimatingFunction, MeanEf, Modality, ObservedDataset, OlsEf, PatternMask, SchemeKind, Schema};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::ingest::{ingest_csv, read_predictions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EfSpec {
    /// Mean of `outcome`; defaults to the last column.
    Mean {
        #[serde(default)]
        outcome: Option<String>,
    },
    /// Least squares of `outcome` on `covariates` (no intercept). Covariates
    /// default to every column outside the outcome's modality.
    Ols {
        #[serde(default)]
        covariates: Option<Vec<String>>,
        #[serde(default)]
        outcome: Option<String>,
    },
}

/// Where the augmentation predictors come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum PredictorManifest {
    /// One CSV per pattern, keyed by a mask string such as `"110"` or by
    /// modality names joined with `+`.
    Files { mode: PredictionMode, patterns: BTreeMap<String, PathBuf> },
    /// Predictors shipped with a simulated design.
    Builtin { bank: BankSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub dgp: Option<DgpConfig>,
    #[serde(default)]
    pub schema: Option<Vec<Modality>>,
    #[serde(default)]
    pub estimating_function: Option<EfSpec>,
    #[serde(default)]
    pub predictors: Option<PredictorManifest>,
    #[serde(default = "default_scheme")]
    pub scheme: SchemeKind,
    /// Overrides `scheme` when set.
    #[serde(default)]
    pub estimator: Option<EstimatorKind>,
    #[serde(default)]
    pub scalarization: Scalarization,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub split: SplitPolicy,
    #[serde(default)]
    pub na_tokens: Vec<String>,
}

fn default_scheme() -> SchemeKind {
    SchemeKind::Adaptive
}

fn default_level() -> f64 {
    0.95
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            dgp: None,
            schema: None,
            estimating_function: None,
            predictors: None,
            scheme: default_scheme(),
            estimator: None,
            scalarization: Scalarization::Trace,
            level: default_level(),
            seed: 0,
            split: SplitPolicy::Stratified,
            na_tokens: Vec::new(),
        }
    }
}

pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("invalid configuration {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    if let Some(p) = cfg.data.as_mut() {
        resolve(p);
    }
    if let Some(PredictorManifest::Files { patterns, .. }) = cfg.predictors.as_mut() {
        patterns.values_mut().for_each(resolve);
    }
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Mean of the outcome, 10 + 20 covariates, trained linear predictors.
    Mean41,
    /// Least squares with four exchangeable covariates and exact moments.
    Ols42,
    /// Two scalar covariates and four equally sized patterns.
    Warmup,
}

impl Preset {
    /// Scenarios simulated by this preset.
    pub fn scenarios(self) -> Vec<Scenario> {
        match self {
            Preset::Mean41 => [("correct", false), ("misspecified", true)]
                .into_iter()
                .map(|(label, m)| Scenario {
                    label: label.into(),
                    dgp: DgpConfig::mean41(500, 2000, m),
                    bank: BankSpec::Trained { train_n: 10_000 },
                })
                .collect(),
            Preset::Ols42 => {
                vec![Scenario { label: "ols".into(), dgp: DgpConfig::ols42(800, 2000), bank: BankSpec::Moments }]
            }
            Preset::Warmup => {
                let dgp = DgpConfig { p1: 1, p2: 1, ..DgpConfig::mean41(250, 250, false) };
                vec![Scenario { label: "warmup".into(), dgp, bank: BankSpec::Trained { train_n: 5000 } }]
            }
        }
    }

    /// Single-dataset configuration built from the first scenario.
    pub fn run_config(self) -> RunConfig {
        let sc = self.scenarios().remove(0);
        RunConfig { dgp: Some(sc.dgp), predictors: Some(PredictorManifest::Builtin { bank: sc.bank }), ..RunConfig::default() }
    }
}

impl RunConfig {
    pub fn estimator(&self) -> EstimatorKind {
        self.estimator.unwrap_or(match self.scheme {
            SchemeKind::Ps => EstimatorKind::IbmPs,
            SchemeKind::Ray => EstimatorKind::IbmRay,
            SchemeKind::Adaptive => EstimatorKind::IbmAdaptive,
        })
    }

    pub fn schema(&self) -> CliResult<Arc<Schema>> {
        match (&self.schema, &self.dgp) {
            (Some(m), _) => Ok(Arc::new(Schema::new(m.clone())?)),
            (None, Some(dgp)) => Ok(Arc::new(dgp.schema()?)),
            (None, None) => Err(CliError::Config("a schema is required for CSV data".into())),
        }
    }

    /// A simulated design as a single scenario.
    pub fn scenario(&self) -> CliResult<Scenario> {
        let dgp = self.dgp.clone().ok_or_else(|| CliError::Config("no simulated design configured".into()))?;
        let bank = match &self.predictors {
            Some(PredictorManifest::Builtin { bank }) => bank.clone(),
            Some(PredictorManifest::Files { .. }) => {
                return Err(CliError::Config("simulated designs use builtin predictors".into()))
            }
            None if dgp.kind == DgpKind::Ols42 => BankSpec::Moments,
            None => BankSpec::Trained { train_n: 10_000 },
        };
        Ok(Scenario { label: "custom".into(), dgp, bank })
    }

    fn check_source(&self) -> CliResult<()> {
        match (&self.data, &self.dgp) {
            (Some(_), Some(_)) => Err(CliError::Config("set either data or dgp, not both".into())),
            (None, None) => Err(CliError::Config("no data: set data (CSV path), dgp, or --preset".into())),
            (None, Some(_)) if self.schema.is_some() || self.estimating_function.is_some() => Err(CliError::Config(
                "schema and estimating_function come from the simulated design".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn estimating_function(&self, schema: &Schema) -> CliResult<Arc<dyn EstimatingFunction>> {
        let spec = self.estimating_function.clone().unwrap_or(EfSpec::Mean { outcome: None });
        let last = || schema.column_names().last().expect("schema has columns").to_string();
        Ok(match spec {
            EfSpec::Mean { outcome } => Arc::new(MeanEf::new(schema, &outcome.unwrap_or_else(last))?),
            EfSpec::Ols { covariates, outcome } => {
                let outcome = outcome.unwrap_or_else(last);
                let om = schema.column_index(&outcome).map(|c| schema.modality_of_column(c));
                let covs = covariates.unwrap_or_else(|| {
                    schema
                        .column_names()
                        .enumerate()
                        .filter(|&(c, _)| Some(schema.modality_of_column(c)) != om)
                        .map(|(_, n)| n.to_string())
                        .collect()
                });
                let covs: Vec<&str> = covs.iter().map(String::as_str).collect();
                Arc::new(OlsEf::new(schema, &covs, &outcome)?)
            }
        })
    }

    /// Loads or simulates the dataset and assembles its predictor bank.
    pub fn materialize(&self) -> CliResult<(ObservedDataset, PredictorBank)> {
        self.check_source()?;
        if self.dgp.is_some() {
            let scenario = self.scenario()?;
            let data = generate(&scenario.dgp)?.data;
            return Ok((data, scenario_bank(&scenario, self.seed)?));
        }
        let schema = self.schema()?;
        let data = ingest_csv(self.data.as_ref().expect("checked"), schema.clone(), &self.na_tokens)?;
        let ef = self.estimating_function(&schema)?;
        let bank = self.file_bank(&data, schema, ef)?;
        Ok((data, bank))
    }

    fn file_bank(
        &self,
        data: &ObservedDataset,
        schema: Arc<Schema>,
        ef: Arc<dyn EstimatingFunction>,
    ) -> CliResult<PredictorBank> {
        let (mode, files) = match &self.predictors {
            Some(PredictorManifest::Files { mode, patterns }) => (*mode, patterns.clone()),
            Some(PredictorManifest::Builtin { .. }) => {
                return Err(CliError::Config("builtin predictors need a simulated design".into()))
            }
            None => (PredictionMode::Imputation, BTreeMap::new()),
        };
        let required = ef.required();
        let mut bank = PredictorBank::new(mode, ef.clone(), schema.clone());
        for (key, path) in &files {
            let r = parse_pattern(key, &schema)?;
            let predictor = match mode {
                PredictionMode::Imputation => {
                    let targets: Vec<usize> = schema
                        .columns_in(required)
                        .into_iter()
                        .filter(|&c| !r.observes(schema.modality_of_column(c)))
                        .collect();
                    let values = read_predictions(path, targets.len())?;
                    Predictor::Imputer(Arc::new(FileImputer::new(targets, values)?))
                }
                PredictionMode::Expectation => {
                    let values = read_predictions(path, ef.dim())?;
                    Predictor::Expectation(Arc::new(FileExpectation::new(ef.dim(), values)?))
                }
            };
            bank.insert(r, predictor)?;
        }
        if mode == PredictionMode::Imputation {
            for r in data.pattern_table()?.augmented() {
                if bank.get(r).is_none() && required.is_subset_of(r) {
                    bank.insert(r, Predictor::Imputer(Arc::new(ObservedOnly)))?;
                }
            }
        }
        Ok(bank)
    }
}

/// `"110"` or `"x1+x2"`.
pub fn parse_pattern(key: &str, schema: &Schema) -> CliResult<PatternMask> {
    if key.len() == schema.width() && key.bytes().all(|b| b == b'0' || b == b'1') {
        return Ok(key.parse()?);
    }
    let mods: Vec<usize> = key
        .split('+')
        .map(|name| {
            schema
                .modality_index(name.trim())
                .ok_or_else(|| CliError::Config(format!("pattern {key:?}: unknown modality {name:?}")))
        })
        .collect::<CliResult<_>>()?;
    Ok(PatternMask::from_modalities(schema.width(), &mods)?)
}
