use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use blockwise::estimators::{run_estimator, CrossFitOptions, EstimateReport, EstimatorKind, Scalarization, SplitPolicy};
use blockwise::lattice::{gamma_eta, OmegaTable};
use blockwise::linalg::condition_number;
use blockwise::simulation::{remainder_study, run_replications, DgpKind, McOptions, MetricsTable, RunOptions};
use blockwise::{Modality, PatternMask, PatternTable, SchemeKind, Schema, WeightScheme};
use clap::Args;
use serde::Serialize;

use crate::config::{load_config, EfSpec, Preset, RunConfig};
use crate::error::{CliError, CliResult};
use crate::ingest::{ingest_csv, write_dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EfChoice {
    Mean,
    Ols,
}

/// Options shared by commands that read a run configuration.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in simulated design; replaces the configured data source.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Confidence level for intervals.
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long, value_parser = parse_split)]
    pub split: Option<SplitPolicy>,
    /// Tuning target `cᵀΣc` with comma-separated `c`; the default is the trace.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub contrast: Option<Vec<f64>>,
    /// Extra cell value treated as missing (repeatable).
    #[arg(long = "na-token")]
    pub na_tokens: Vec<String>,
}

fn parse_split(s: &str) -> Result<SplitPolicy, String> {
    match s {
        "stratified" => Ok(SplitPolicy::Stratified),
        "plain" => Ok(SplitPolicy::Plain),
        _ => Err(format!("unknown split policy {s:?} (stratified, plain)")),
    }
}

impl ConfigArgs {
    fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => RunConfig::default(),
        };
        if let Some(p) = self.preset {
            let preset = p.run_config();
            cfg.data = None;
            cfg.schema = None;
            cfg.estimating_function = None;
            cfg.dgp = preset.dgp;
            cfg.predictors = preset.predictors;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
            if let Some(d) = cfg.dgp.as_mut() {
                d.seed = s;
            }
        }
        if let Some(l) = self.level {
            cfg.level = l;
        }
        if let Some(s) = self.split {
            cfg.split = s;
        }
        if let Some(c) = &self.contrast {
            cfg.scalarization = Scalarization::Contrast(c.clone());
        }
        cfg.na_tokens.extend(self.na_tokens.iter().cloned());
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// CSV data file; replaces the configured data source.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Option<SchemeKind>,
    /// naive, ppi, ppi_pp, ibm_ps, ibm_ray or ibm_adaptive; overrides --scheme.
    #[arg(long)]
    pub estimator: Option<EstimatorKind>,
    /// Estimating function; keeps any configured outcome and covariates.
    #[arg(long, value_enum)]
    pub ef: Option<EfChoice>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_scheme(s: &str) -> Result<SchemeKind, String> {
    match s {
        "ps" => Ok(SchemeKind::Ps),
        "ray" => Ok(SchemeKind::Ray),
        "adaptive" => Ok(SchemeKind::Adaptive),
        _ => Err(format!("unknown scheme {s:?} (ps, ray, adaptive)")),
    }
}

fn emit(text: &str, out: Option<&PathBuf>) -> CliResult<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(CliError::Output),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(text.as_bytes()).and_then(|_| so.flush()).map_err(CliError::Output)
        }
    }
}

pub fn estimate(args: &EstimateArgs) -> CliResult<EstimateReport> {
    let mut cfg = args.common.resolve()?;
    if let Some(d) = &args.data {
        cfg.data = Some(d.clone());
        cfg.dgp = None;
    }
    if let Some(s) = args.scheme {
        cfg.scheme = s;
        cfg.estimator = None;
    }
    if let Some(e) = args.estimator {
        cfg.estimator = Some(e);
    }
    if let Some(ef) = args.ef {
        if cfg.dgp.is_none() {
            let outcome = match &cfg.estimating_function {
                Some(EfSpec::Mean { outcome }) | Some(EfSpec::Ols { outcome, .. }) => outcome.clone(),
                None => None,
            };
            let covariates = match &cfg.estimating_function {
                Some(EfSpec::Ols { covariates, .. }) => covariates.clone(),
                _ => None,
            };
            cfg.estimating_function = Some(match ef {
                EfChoice::Mean => EfSpec::Mean { outcome },
                EfChoice::Ols => EfSpec::Ols { covariates, outcome },
            });
        }
    }
    let (data, bank) = cfg.materialize()?;
    let table = data.pattern_table()?;
    eprintln!(
        "estimate: {} rows, {} patterns, {} ({})",
        data.len(),
        table.patterns().len(),
        cfg.estimator().name(),
        bank.ef().name()
    );
    let opts = CrossFitOptions {
        scalarization: cfg.scalarization.clone(),
        split: cfg.split,
        level: cfg.level,
        ..CrossFitOptions::new(cfg.scheme, cfg.seed)
    };
    Ok(run_estimator(cfg.estimator(), &data, &bank, &opts)?)
}

pub fn run_estimate(args: &EstimateArgs) -> CliResult<()> {
    let report = estimate(args)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    emit(&text, args.out.as_ref())
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    #[arg(long, default_value_t = 500)]
    pub reps: usize,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Comma-separated estimator names; defaults to every applicable one.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<EstimatorKind>>,
    /// Directory for metrics.csv, metrics.json and replications.csv. Without
    /// it the metrics CSV goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ReplicationLine<'a> {
    scenario: &'a str,
    rep: usize,
    estimator: &'a str,
    component: usize,
    theta_star: f64,
    theta_hat: Option<f64>,
    ci_lower: Option<f64>,
    ci_upper: Option<f64>,
    trace: Option<f64>,
    cond_g: Option<f64>,
    error: Option<&'a str>,
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> CliResult<Vec<u8>> {
    let mut wr = csv::Writer::from_writer(Vec::new());
    for r in rows {
        wr.serialize(r).map_err(|e| CliError::Output(e.into()))?;
    }
    wr.into_inner().map_err(|e| CliError::Output(e.into_error()))
}

pub fn simulate(args: &SimulateArgs) -> CliResult<MetricsTable> {
    let cfg = args.common.resolve()?;
    let scenarios = match args.common.preset {
        Some(p) => p
            .scenarios()
            .into_iter()
            .map(|mut s| {
                s.dgp.seed = cfg.seed;
                s
            })
            .collect(),
        None => vec![cfg.scenario()?],
    };
    let opts =
        RunOptions { jobs: args.jobs, level: cfg.level, scalarization: cfg.scalarization.clone(), split: cfg.split };
    let mut table: Option<MetricsTable> = None;
    for sc in &scenarios {
        let estimators = match &args.estimators {
            Some(e) => e.clone(),
            None if sc.dgp.kind == DgpKind::Ols42 => vec![
                EstimatorKind::Naive,
                EstimatorKind::IbmPs,
                EstimatorKind::IbmRay,
                EstimatorKind::IbmAdaptive,
            ],
            None => EstimatorKind::ALL.to_vec(),
        };
        eprintln!("simulate: {} ({} reps, {} estimators)", sc.label, args.reps, estimators.len());
        let t = run_replications(sc, &estimators, args.reps, cfg.seed, &opts)?;
        match table.as_mut() {
            Some(acc) => acc.extend(t),
            None => table = Some(t),
        }
    }
    Ok(table.expect("at least one scenario"))
}

pub fn run_simulate(args: &SimulateArgs) -> CliResult<()> {
    let table = simulate(args)?;
    let mut metrics = Vec::new();
    table.write_csv(&mut metrics)?;
    let Some(dir) = &args.out else {
        return emit(&String::from_utf8(metrics).expect("utf-8 csv"), None);
    };
    std::fs::create_dir_all(dir).map_err(CliError::Output)?;
    std::fs::write(dir.join("metrics.csv"), metrics).map_err(CliError::Output)?;
    std::fs::write(dir.join("metrics.json"), table.to_json()? + "\n").map_err(CliError::Output)?;
    let mut lines = Vec::new();
    for (label, star, recs) in &table.records {
        for r in recs {
            for (j, &ts) in star.iter().enumerate() {
                lines.push(ReplicationLine {
                    scenario: label,
                    rep: r.rep,
                    estimator: &r.estimator,
                    component: j,
                    theta_star: ts,
                    theta_hat: r.theta_hat.get(j).copied(),
                    ci_lower: r.ci.get(j).map(|c| c[0]),
                    ci_upper: r.ci.get(j).map(|c| c[1]),
                    trace: r.ok().then_some(r.trace),
                    cond_g: r.cond_g,
                    error: r.error.as_deref(),
                });
            }
        }
    }
    std::fs::write(dir.join("replications.csv"), csv_bytes(lines)?).map_err(CliError::Output)?;
    eprintln!("simulate: wrote {}", dir.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_generate(args: &GenerateArgs) -> CliResult<()> {
    let cfg = args.common.resolve()?;
    let scenario = cfg.scenario()?;
    let data = blockwise::simulation::generate(&scenario.dgp)?.data;
    let mut bytes = Vec::new();
    write_dataset(&data, &mut bytes)?;
    emit(&String::from_utf8(bytes).expect("utf-8 csv"), args.out.as_ref())
}

#[derive(Debug, Args)]
pub struct RemainderArgs {
    /// `start:stop:step`, inclusive.
    #[arg(long, default_value = "-0.4:0.8:0.1", allow_hyphen_values = true)]
    pub rho_grid: String,
    /// Pattern proportions as `111=0.25,110=0.25,...`; the complete pattern
    /// must be present.
    #[arg(long, default_value = "111=0.25,110=0.25,101=0.25,100=0.25")]
    pub proportions: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub mc_batches: usize,
    #[arg(long, default_value_t = 10_000)]
    pub mc_draws: usize,
    /// Exact variances only.
    #[arg(long)]
    pub no_mc: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    let bad = || CliError::Config(format!("grid {s:?} is not start:stop:step"));
    let parts: Vec<f64> = s.split(':').map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect::<CliResult<_>>()?;
    let [a, b, h] = parts[..] else { return Err(bad()) };
    if !(h > 0.0 && b >= a && a.is_finite() && b.is_finite()) {
        return Err(bad());
    }
    let n = ((b - a) / h + 1e-9).floor() as usize;
    // Grid points are snapped to 10 decimals so that e.g. 0 is exactly 0.
    Ok((0..=n).map(|k| ((a + k as f64 * h) * 1e10).round() / 1e10).collect())
}

fn parse_proportions(s: &str) -> CliResult<PatternTable> {
    let mut w = Vec::new();
    for item in s.split(',') {
        let (m, p) = item.split_once('=').ok_or_else(|| CliError::Config(format!("bad proportion {item:?}")))?;
        let p: f64 = p.trim().parse().map_err(|_| CliError::Config(format!("bad proportion {item:?}")))?;
        w.push((m.trim().parse::<PatternMask>()?, p));
    }
    let width = w.first().map(|(m, _)| m.width()).unwrap_or(0);
    Ok(PatternTable::from_proportions(width, w)?)
}

pub fn run_remainder(args: &RemainderArgs) -> CliResult<()> {
    let grid = parse_grid(&args.rho_grid)?;
    let table = parse_proportions(&args.proportions)?;
    let mc = McOptions { batches: args.mc_batches, draws: args.mc_draws, seed: args.seed };
    let study = remainder_study(&grid, &table, (!args.no_mc).then_some(&mc))?;
    let worst = study.remainder_sums.iter().fold(0.0f64, |m, (_, v)| m.max(*v));
    eprintln!("remainder: {} rows, max |Σ Rem_s| = {worst:.2e}", study.rows.len());
    let bytes = csv_bytes(&study.rows)?;
    emit(&String::from_utf8(bytes).expect("utf-8 csv"), args.out.as_ref())
}

#[derive(Debug, Args)]
pub struct LatticeArgs {
    /// CSV data file.
    pub data: PathBuf,
    /// Configuration supplying the schema.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Modality as `name=col1,col2` (repeatable); without a schema every
    /// column other than `row_id` is its own modality.
    #[arg(long = "block")]
    pub blocks: Vec<String>,
    #[arg(long = "na-token")]
    pub na_tokens: Vec<String>,
}

#[derive(Serialize)]
struct PatternLine {
    pattern: PatternMask,
    modalities: Vec<String>,
    count: u64,
    pi: f64,
    lambda: f64,
}

#[derive(Serialize)]
struct SchemeSummary {
    gamma: Vec<f64>,
    eta: Vec<Vec<f64>>,
    cond_eta: f64,
    /// `E[ω_r]` under the empirical pattern law; zero up to rounding.
    max_abs_mean_omega: f64,
}

#[derive(Serialize)]
struct LatticeReport {
    n: u64,
    modalities: Vec<String>,
    patterns: Vec<PatternLine>,
    augmented: Vec<PatternMask>,
    ps: SchemeSummary,
    ray: SchemeSummary,
}

fn header_schema(path: &PathBuf) -> CliResult<Schema> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| blockwise::Error::Parse(e.to_string()))?;
    let header = rdr.headers().map_err(|e| blockwise::Error::Parse(e.to_string()))?;
    let mods: Vec<Modality> = header
        .iter()
        .filter(|h| *h != crate::ingest::ID_COLUMN)
        .map(|h| Modality { name: h.to_string(), columns: vec![h.to_string()] })
        .collect();
    if mods.is_empty() {
        return Err(blockwise::Error::EmptyFile.into());
    }
    Ok(Schema::new(mods)?)
}

fn scheme_summary(ws: &WeightScheme, table: &PatternTable) -> CliResult<SchemeSummary> {
    let (gamma, eta) = gamma_eta(ws, table)?;
    let om = OmegaTable::new(ws, table)?;
    let max_abs_mean_omega = (0..om.augmented.len())
        .map(|k| table.proportions().iter().enumerate().map(|(i, p)| p * om.values[(i, k)]).sum::<f64>().abs())
        .fold(0.0, f64::max);
    Ok(SchemeSummary {
        gamma,
        eta: eta.row_iter().map(|r| r.iter().copied().collect()).collect(),
        cond_eta: condition_number(&eta),
        max_abs_mean_omega,
    })
}

pub fn run_lattice(args: &LatticeArgs) -> CliResult<()> {
    let (schema, mut na) = match (&args.config, args.blocks.is_empty()) {
        (Some(_), false) => return Err(CliError::Config("use either --config or --block".into())),
        (Some(p), true) => {
            let cfg = load_config(p)?;
            (cfg.schema()?, cfg.na_tokens)
        }
        (None, false) => {
            let mods = args
                .blocks
                .iter()
                .map(|b| {
                    let (name, cols) =
                        b.split_once('=').ok_or_else(|| CliError::Config(format!("block {b:?} is not name=cols")))?;
                    Ok(Modality { name: name.into(), columns: cols.split(',').map(String::from).collect() })
                })
                .collect::<CliResult<Vec<_>>>()?;
            (Arc::new(Schema::new(mods)?), Vec::new())
        }
        (None, true) => (Arc::new(header_schema(&args.data)?), Vec::new()),
    };
    na.extend(args.na_tokens.iter().cloned());
    let data = ingest_csv(&args.data, schema.clone(), &na)?;
    let table = data.pattern_table()?;
    let names: Vec<String> = schema.modalities().iter().map(|m| m.name.clone()).collect();
    let counts = table.counts().expect("counted from rows");
    let patterns = table
        .patterns()
        .iter()
        .zip(counts)
        .zip(table.proportions())
        .map(|((&r, &count), &pi)| PatternLine {
            pattern: r,
            modalities: r.modalities().map(|m| names[m].clone()).collect(),
            count,
            pi,
            lambda: table.lambda(r),
        })
        .collect();
    let report = LatticeReport {
        n: table.total().expect("counted"),
        modalities: names,
        patterns,
        augmented: table.augmented(),
        ps: scheme_summary(&WeightScheme::Ps, &table)?,
        ray: scheme_summary(&WeightScheme::Ray, &table)?,
    };
    emit(&(serde_json::to_string_pretty(&report).expect("lattice report serializes") + "\n"), None)
}
