//! Experiment harness behind the `mvtlex` binary.
//!
//! Three verbs:
//!
//! * `run` evolves one model per (strategy, seed) on a .75/.25 train/test
//!   split and writes, per run, `<strategy>_seed<seed>.generations.csv`,
//!   `<strategy>_seed<seed>.selection.csv` and `<strategy>_seed<seed>.summary.json`.
//! * `compare` does the same and aggregates over seeds into
//!   `convergence.csv`, `cases_used.csv` and `final_scores.csv`.
//! * `scaling` times short runs over a grid of synthetic dataset shapes and
//!   writes `scaling.csv`.
//!
//! Every CSV starts with a `# schema: ...` line. Floats are written in
//! shortest round-trip form, so files are reproducible byte for byte from the
//! spec and seeds, wall-time columns aside.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::data::{self, DataError, Dataset};
use crate::evolve::{self, EvolutionConfig, EvolveError, GenerationLog, SurvivalMode};
use crate::model::{self, ModelError, ModelReport};
use crate::selection::{self, SelectionStrategy};

pub const GENERATIONS_SCHEMA: &str = "mvtlex.generations.v1";
pub const SELECTION_SCHEMA: &str = "mvtlex.selection.v1";
pub const SUMMARY_SCHEMA: &str = "mvtlex.summary.v1";
pub const CONVERGENCE_SCHEMA: &str = "mvtlex.convergence.v1";
pub const CASES_USED_SCHEMA: &str = "mvtlex.cases_used.v1";
pub const FINAL_SCORES_SCHEMA: &str = "mvtlex.final_scores.v1";
pub const SCALING_SCHEMA: &str = "mvtlex.scaling.v1";

/// Environment variable holding the worker thread count.
pub const WORKERS_ENV: &str = "MVTLEX_WORKERS";

/// Held-out test fraction of every run.
pub const TEST_FRACTION: f64 = 0.25;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Evolve(#[from] EvolveError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl CliError {
    fn config(field: &str, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Where the data comes from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        target: Option<String>,
    },
    Friedman1 {
        n_samples: usize,
        n_features: usize,
        noise: f64,
        seed: u64,
    },
}

impl FromStr for DatasetSource {
    type Err = CliError;

    /// `friedman1:n=500,noise=0.1[,p=10][,seed=0]` or a CSV path.
    fn from_str(s: &str) -> Result<Self> {
        let Some(params) = s.strip_prefix("friedman1") else {
            return Ok(DatasetSource::Csv {
                path: PathBuf::from(s),
                target: None,
            });
        };
        let (mut n_samples, mut n_features, mut noise, mut seed) = (500, 10, 0.1, 0);
        for kv in params.trim_start_matches(':').split(',').filter(|p| !p.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::config("dataset", format!("expected key=value, got `{kv}`")))?;
            let bad = |_| CliError::config("dataset", format!("bad value for `{k}`: `{v}`"));
            match k.trim() {
                "n" => {
                    n_samples = v
                        .trim()
                        .parse()
                        .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?
                }
                "p" => {
                    n_features = v
                        .trim()
                        .parse()
                        .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?
                }
                "noise" => {
                    noise = v
                        .trim()
                        .parse()
                        .map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?
                }
                "seed" => {
                    seed = v
                        .trim()
                        .parse()
                        .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?
                }
                other => return Err(CliError::config("dataset", format!("unknown parameter `{other}`"))),
            }
        }
        Ok(DatasetSource::Friedman1 {
            n_samples,
            n_features,
            noise,
            seed,
        })
    }
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Csv { path, target } => {
                let target = match target {
                    Some(t) => t.clone(),
                    None => last_header_column(path)?,
                };
                Ok(data::load_csv(path, &target)?)
            }
            DatasetSource::Friedman1 {
                n_samples,
                n_features,
                noise,
                seed,
            } => Ok(data::synth_friedman1_with_features(
                *n_samples,
                *n_features,
                *noise,
                *seed,
            )?),
        }
    }
}

fn last_header_column(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .next()
        .and_then(|h| h.split(',').next_back())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| CliError::config("target", "cannot infer target column from an empty header"))
}

/// Everything needed to reproduce a suite of runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub dataset: DatasetSource,
    pub strategies: Vec<SelectionStrategy>,
    pub seeds: Vec<u64>,
    /// Base configuration; `strategy` and `seed` are overridden per run.
    pub config: EvolutionConfig,
    pub out_dir: PathBuf,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(CliError::config("strategy", "at least one strategy is required"));
        }
        if self.seeds.is_empty() {
            return Err(CliError::config("seed", "at least one seed is required"));
        }
        let probe = EvolutionConfig {
            strategy: self.strategies[0],
            seed: self.seeds[0],
            ..self.config.clone()
        };
        probe.validate().map_err(|e| match e {
            EvolveError::Config { field, reason } => CliError::config(field, reason),
            other => other.into(),
        })
    }
}

/// Partially specified experiment settings, as read from a config file or
/// command-line flags. Later sources override earlier ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub dataset: Option<String>,
    pub target: Option<String>,
    pub strategies: Option<Vec<String>>,
    pub seeds: Option<Vec<u64>>,
    pub out_dir: Option<PathBuf>,
    pub generations: Option<usize>,
    pub pop_size: Option<usize>,
    /// `Some(None)` means unlimited.
    pub batch_size: Option<Option<usize>>,
    pub cross_rate: Option<f64>,
    pub max_depth: Option<usize>,
    pub max_dimensions: Option<usize>,
    pub backprop_iters: Option<usize>,
    pub learning_rate: Option<f64>,
    pub ridge_lambda: Option<f64>,
    pub survival: Option<SurvivalMode>,
    pub validation_fraction: Option<f64>,
}

fn parse_field<T: FromStr>(field: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e: T::Err| CliError::config(field, format!("cannot parse `{}`: {e}", value.trim())))
}

fn parse_list<T: FromStr>(field: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_field(field, s))
        .collect()
}

pub fn parse_batch(value: &str) -> Result<Option<usize>> {
    match value.trim().to_ascii_lowercase().as_str() {
        "none" | "unlimited" | "off" | "0" => Ok(None),
        v => parse_field("batch", v).map(Some),
    }
}

impl Overrides {
    /// Parses flat `key = value` lines. `#` starts a comment; list values
    /// are comma-separated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut o = Overrides::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::config(
                    &format!("line {}", lineno + 1),
                    format!("expected key=value, got `{line}`"),
                )
            })?;
            o.set(key.trim(), value.trim())?;
        }
        Ok(o)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = Some(value.to_string()),
            "target" => self.target = Some(value.to_string()),
            "strategy" | "strategies" => self.strategies = Some(parse_list::<String>(key, value)?),
            "seed" | "seeds" => self.seeds = Some(parse_list(key, value)?),
            "out" | "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            "gens" | "generations" => self.generations = Some(parse_field(key, value)?),
            "pop" | "pop_size" => self.pop_size = Some(parse_field(key, value)?),
            "batch" | "batch_size" => self.batch_size = Some(parse_batch(value)?),
            "cross_rate" => self.cross_rate = Some(parse_field(key, value)?),
            "max_depth" => self.max_depth = Some(parse_field(key, value)?),
            "max_dimensions" | "max_dim" => self.max_dimensions = Some(parse_field(key, value)?),
            "backprop_iters" | "iters" => self.backprop_iters = Some(parse_field(key, value)?),
            "learning_rate" => self.learning_rate = Some(parse_field(key, value)?),
            "ridge_lambda" => self.ridge_lambda = Some(parse_field(key, value)?),
            "survival" => self.survival = Some(parse_field(key, value)?),
            "validation_fraction" => self.validation_fraction = Some(parse_field(key, value)?),
            other => return Err(CliError::config(other, "unknown key")),
        }
        Ok(())
    }

    /// Fields set in `other` replace those in `self`.
    pub fn merge(mut self, other: Overrides) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            dataset,
            target,
            strategies,
            seeds,
            out_dir,
            generations,
            pop_size,
            batch_size,
            cross_rate,
            max_depth,
            max_dimensions,
            backprop_iters,
            learning_rate,
            ridge_lambda,
            survival,
            validation_fraction
        );
        self
    }

    pub fn into_spec(self) -> Result<ExperimentSpec> {
        let mut dataset: DatasetSource = self
            .dataset
            .as_deref()
            .ok_or_else(|| CliError::config("dataset", "no dataset given"))?
            .parse()?;
        if let (DatasetSource::Csv { target, .. }, Some(t)) = (&mut dataset, self.target) {
            *target = Some(t);
        }
        let strategies = self
            .strategies
            .unwrap_or_else(|| vec![SelectionStrategy::MadSemiDynamic.name().to_string()])
            .iter()
            .map(|s| {
                s.parse::<SelectionStrategy>()
                    .map_err(|e| CliError::config("strategy", e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut config = EvolutionConfig::default();
        macro_rules! apply {
            ($($f:ident => $c:ident),*) => { $( if let Some(v) = self.$f { config.$c = v; } )* };
        }
        apply!(
            generations => generations, pop_size => pop_size, batch_size => batch_size, cross_rate => cross_rate,
            max_depth => max_depth, max_dimensions => max_dimensions, backprop_iters => backprop_iters,
            learning_rate => learning_rate, survival => survival_mode, validation_fraction => validation_fraction
        );
        if let Some(l) = self.ridge_lambda {
            config.ridge.regularization_strength = l;
        }
        let spec = ExperimentSpec {
            dataset,
            strategies,
            seeds: self.seeds.unwrap_or_else(|| vec![0]),
            config,
            out_dir: self.out_dir.unwrap_or_else(|| PathBuf::from("mvtlex-out")),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Result of one (strategy, seed) run.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub strategy: SelectionStrategy,
    pub seed: u64,
    pub logs: Vec<GenerationLog>,
    pub model: ModelReport,
    pub train_r2: f64,
    pub train_mse: f64,
    pub test_r2: f64,
    pub test_mse: f64,
    pub validation_mse: f64,
    pub complexity: u64,
    pub size: usize,
    pub wall_time_ms: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    schema: &'static str,
    dataset: String,
    strategy: &'static str,
    seed: u64,
    config: &'a EvolutionConfig,
    train_samples: usize,
    test_samples: usize,
    model: &'a ModelReport,
    train_r2: f64,
    train_mse: f64,
    test_r2: f64,
    test_mse: f64,
    validation_mse: f64,
    complexity: u64,
    size: usize,
    generations: usize,
    total_wall_time_ms: f64,
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Per-generation CSV body.
pub fn generations_csv(logs: &[GenerationLog]) -> String {
    let mut s = format!("# schema: {GENERATIONS_SCHEMA}\n");
    s.push_str("generation,min_validation_loss,min_fit_loss,median_cases_used,wall_time_ms\n");
    for l in logs {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            l.generation, l.min_validation_loss, l.min_fit_loss, l.median_cases_used, l.wall_time_ms
        );
    }
    s
}

/// Selection statistics CSV body.
pub fn selection_csv(strategy: SelectionStrategy, logs: &[GenerationLog]) -> String {
    let mut s = format!("# schema: {SELECTION_SCHEMA}\n");
    s.push_str("generation,strategy,median_cases_used,mean_cases_used,max_cases_used\n");
    for l in logs {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            l.generation, strategy, l.median_cases_used, l.mean_cases_used, l.max_cases_used
        );
    }
    s
}

pub fn run_stem(strategy: SelectionStrategy, seed: u64) -> String {
    format!("{strategy}_seed{seed}")
}

/// Splits, evolves and scores one run without touching the filesystem.
pub fn execute_run(
    dataset: &Dataset,
    base: &EvolutionConfig,
    strategy: SelectionStrategy,
    seed: u64,
) -> Result<RunRecord> {
    let split = data::train_test_split(dataset, TEST_FRACTION, seed)?;
    let config = EvolutionConfig {
        strategy,
        seed,
        ..base.clone()
    };
    let started = Instant::now();
    let out = evolve::run(&config, &split.first)?;
    let wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
    let score = |ds: &Dataset| -> Result<(f64, f64)> {
        let pred = model::predict(&out.best, ds.features())?;
        let y = ds.targets().as_slice();
        // a constant target leaves R² undefined
        let r2 = model::r2(&pred, y).unwrap_or(f64::NAN);
        Ok((r2, model::mse(&pred, y)?))
    };
    let (train_r2, train_mse) = score(&split.first)?;
    let (test_r2, test_mse) = score(&split.second)?;
    Ok(RunRecord {
        strategy,
        seed,
        logs: out.logs,
        model: out.best.report(Some(dataset.feature_names())),
        train_r2,
        train_mse,
        test_r2,
        test_mse,
        validation_mse: out.best_validation_mse,
        complexity: out.best.complexity(),
        size: out.best.size(),
        wall_time_ms,
    })
}

fn write_run(spec: &ExperimentSpec, dataset: &Dataset, rec: &RunRecord) -> Result<()> {
    let stem = run_stem(rec.strategy, rec.seed);
    let dir = &spec.out_dir;
    write_file(
        &dir.join(format!("{stem}.generations.csv")),
        &generations_csv(&rec.logs),
    )?;
    write_file(
        &dir.join(format!("{stem}.selection.csv")),
        &selection_csv(rec.strategy, &rec.logs),
    )?;
    let config = EvolutionConfig {
        strategy: rec.strategy,
        seed: rec.seed,
        ..spec.config.clone()
    };
    let n = dataset.n_samples();
    let test = (TEST_FRACTION * n as f64 + 0.5).floor().clamp(1.0, (n - 1) as f64) as usize;
    let summary = Summary {
        schema: SUMMARY_SCHEMA,
        dataset: dataset.identity(),
        strategy: rec.strategy.name(),
        seed: rec.seed,
        config: &config,
        train_samples: n - test,
        test_samples: test,
        model: &rec.model,
        train_r2: rec.train_r2,
        train_mse: rec.train_mse,
        test_r2: rec.test_r2,
        test_mse: rec.test_mse,
        validation_mse: rec.validation_mse,
        complexity: rec.complexity,
        size: rec.size,
        generations: rec.logs.len(),
        total_wall_time_ms: rec.wall_time_ms,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::config("summary", e.to_string()))?;
    write_file(&dir.join(format!("{stem}.summary.json")), &(json + "\n"))
}

/// Runs every (strategy, seed) pair in order and writes per-run outputs.
pub fn cmd_run(spec: &ExperimentSpec) -> Result<Vec<RunRecord>> {
    spec.validate()?;
    let dataset = spec.dataset.load()?;
    ensure_dir(&spec.out_dir)?;
    let mut records = Vec::new();
    for &strategy in &spec.strategies {
        for &seed in &spec.seeds {
            let rec = execute_run(&dataset, &spec.config, strategy, seed)?;
            write_run(spec, &dataset, &rec)?;
            records.push(rec);
        }
    }
    Ok(records)
}

fn median_of(values: &[f64]) -> f64 {
    selection::median(values)
}

/// Wide table: one row per generation, one column per strategy holding the
/// median over seeds of `metric`.
pub fn per_generation_table(
    schema: &str,
    strategies: &[SelectionStrategy],
    records: &[RunRecord],
    metric: impl Fn(&GenerationLog) -> f64,
) -> String {
    let mut s = format!("# schema: {schema}\ngeneration");
    for st in strategies {
        let _ = write!(s, ",{st}");
    }
    s.push('\n');
    let mut by_gen: BTreeMap<usize, BTreeMap<SelectionStrategy, Vec<f64>>> = BTreeMap::new();
    for rec in records {
        for l in &rec.logs {
            by_gen
                .entry(l.generation)
                .or_default()
                .entry(rec.strategy)
                .or_default()
                .push(metric(l));
        }
    }
    for (generation, cols) in by_gen {
        let _ = write!(s, "{generation}");
        for st in strategies {
            match cols.get(st) {
                Some(v) => {
                    let _ = write!(s, ",{}", median_of(v));
                }
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    s
}

pub fn final_scores_table(strategies: &[SelectionStrategy], records: &[RunRecord]) -> String {
    let mut s = format!("# schema: {FINAL_SCORES_SCHEMA}\n");
    s.push_str("strategy,median_test_r2,median_complexity,median_size\n");
    for &st in strategies {
        let runs: Vec<&RunRecord> = records.iter().filter(|r| r.strategy == st).collect();
        let r2: Vec<f64> = runs.iter().map(|r| r.test_r2).collect();
        let cx: Vec<f64> = runs.iter().map(|r| r.complexity as f64).collect();
        let sz: Vec<f64> = runs.iter().map(|r| r.size as f64).collect();
        let _ = writeln!(s, "{st},{},{},{}", median_of(&r2), median_of(&cx), median_of(&sz));
    }
    s
}

/// Runs the suite, then writes the aggregate tables.
pub fn cmd_compare(spec: &ExperimentSpec) -> Result<Vec<RunRecord>> {
    let records = cmd_run(spec)?;
    let dir = &spec.out_dir;
    write_file(
        &dir.join("convergence.csv"),
        &per_generation_table(CONVERGENCE_SCHEMA, &spec.strategies, &records, |l| {
            l.min_validation_loss
        }),
    )?;
    write_file(
        &dir.join("cases_used.csv"),
        &per_generation_table(CASES_USED_SCHEMA, &spec.strategies, &records, |l| l.median_cases_used),
    )?;
    write_file(
        &dir.join("final_scores.csv"),
        &final_scores_table(&spec.strategies, &records),
    )?;
    Ok(records)
}

/// A timing grid over synthetic Friedman #1 datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingSpec {
    pub strategies: Vec<SelectionStrategy>,
    pub sample_sizes: Vec<usize>,
    pub feature_counts: Vec<usize>,
    pub seed: u64,
    pub repeats: usize,
    pub noise: f64,
    pub config: EvolutionConfig,
    pub out_dir: PathBuf,
}

impl ScalingSpec {
    /// Short unbatched runs, so that every sample is a selection case.
    pub fn default_config() -> EvolutionConfig {
        EvolutionConfig {
            generations: 10,
            batch_size: None,
            ..EvolutionConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub strategy: SelectionStrategy,
    pub n_samples: usize,
    pub n_features: usize,
    pub repeat: usize,
    pub wall_time_ms: f64,
}

pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut s = format!("# schema: {SCALING_SCHEMA}\nstrategy,n_samples,n_features,wall_time_ms\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.3}",
            r.strategy, r.n_samples, r.n_features, r.wall_time_ms
        );
    }
    s
}

/// Times `evolve::run` at every (strategy, samples, features) grid point,
/// `repeats` times each. Repeat `k` uses seed `seed + k` for both the data
/// and the run. Writes `scaling.csv` (one row per timed run).
pub fn cmd_scaling(spec: &ScalingSpec) -> Result<Vec<ScalingRow>> {
    if spec.strategies.is_empty() {
        return Err(CliError::config("strategy", "at least one strategy is required"));
    }
    if spec.sample_sizes.is_empty() || spec.feature_counts.is_empty() {
        return Err(CliError::config(
            "samples",
            "sample and feature grids must be non-empty",
        ));
    }
    spec.config.validate().map_err(|e| match e {
        EvolveError::Config { field, reason } => CliError::config(field, reason),
        other => other.into(),
    })?;
    ensure_dir(&spec.out_dir)?;
    let mut rows = Vec::new();
    for &strategy in &spec.strategies {
        for &n_samples in &spec.sample_sizes {
            for &n_features in &spec.feature_counts {
                for repeat in 0..spec.repeats.max(1) {
                    let seed = spec.seed + repeat as u64;
                    let ds = data::synth_friedman1_with_features(n_samples, n_features, spec.noise, seed)?;
                    let config = EvolutionConfig {
                        strategy,
                        seed,
                        ..spec.config.clone()
                    };
                    let started = Instant::now();
                    evolve::run(&config, &ds)?;
                    let wall_time_ms = (started.elapsed().as_secs_f64() * 1e3).max(1e-3);
                    rows.push(ScalingRow {
                        strategy,
                        n_samples,
                        n_features,
                        repeat,
                        wall_time_ms,
                    });
                }
            }
        }
    }
    write_file(&spec.out_dir.join("scaling.csv"), &scaling_csv(&rows))?;
    Ok(rows)
}

#[derive(Debug, Parser)]
#[command(
    name = "mvtlex",
    version,
    about = "Symbolic regression with epsilon-lexicase parent selection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evolve one model per (strategy, seed) and write per-run outputs.
    Run(ExperimentArgs),
    /// Run a suite and aggregate convergence, cases used and final scores.
    Compare(ExperimentArgs),
    /// Time short runs over a grid of synthetic dataset shapes.
    Scaling(ScalingArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct ExperimentArgs {
    /// key=value config file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Selection strategy (repeatable).
    #[arg(long = "strategy")]
    pub strategies: Vec<String>,
    /// Run seed (repeatable).
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV path or `friedman1:n=500,noise=0.1`.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Target column of a CSV dataset (default: last column).
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub gens: Option<usize>,
    #[arg(long)]
    pub pop: Option<usize>,
    /// Batch size, or `none` for the whole fit partition.
    #[arg(long)]
    pub batch: Option<String>,
}

impl ExperimentArgs {
    pub fn to_spec(&self) -> Result<ExperimentSpec> {
        let mut base = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::config("config", format!("cannot read {}: {e}", path.display())))?;
                Overrides::parse(&text)?
            }
            None => Overrides::default(),
        };
        let mut flags = Overrides {
            dataset: self.dataset.clone(),
            target: self.target.clone(),
            out_dir: self.out.clone(),
            generations: self.gens,
            pop_size: self.pop,
            ..Overrides::default()
        };
        if !self.strategies.is_empty() {
            flags.strategies = Some(self.strategies.clone());
        }
        if !self.seeds.is_empty() {
            flags.seeds = Some(self.seeds.clone());
        }
        if let Some(b) = &self.batch {
            flags.batch_size = Some(parse_batch(b)?);
        }
        base = base.merge(flags);
        base.into_spec()
    }
}

#[derive(Debug, Args, Clone)]
pub struct ScalingArgs {
    #[arg(long = "strategy", required = true)]
    pub strategies: Vec<String>,
    /// Comma-separated sample sizes.
    #[arg(long, default_value = "250,500,1000")]
    pub samples: String,
    /// Comma-separated feature counts.
    #[arg(long, default_value = "5,10,25")]
    pub features: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long, default_value_t = 10)]
    pub gens: usize,
    #[arg(long, default_value_t = 100)]
    pub pop: usize,
    #[arg(long, default_value = "mvtlex-out")]
    pub out: PathBuf,
}

impl ScalingArgs {
    pub fn to_spec(&self) -> Result<ScalingSpec> {
        let strategies = self
            .strategies
            .iter()
            .map(|s| {
                s.parse::<SelectionStrategy>()
                    .map_err(|e| CliError::config("strategy", e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ScalingSpec {
            strategies,
            sample_sizes: parse_list("samples", &self.samples)?,
            feature_counts: parse_list("features", &self.features)?,
            seed: self.seed,
            repeats: self.repeats,
            noise: 0.1,
            config: EvolutionConfig {
                generations: self.gens,
                pop_size: self.pop,
                ..ScalingSpec::default_config()
            },
            out_dir: self.out.clone(),
        })
    }
}

/// Worker count from [`WORKERS_ENV`]; 0 (rayon's default) when unset.
pub fn workers_from_env() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => parse_field(WORKERS_ENV, &v),
        Err(_) => Ok(0),
    }
}

/// Executes a parsed command line.
pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run(args) => {
            let spec = args.to_spec()?;
            for rec in cmd_run(&spec)? {
                println!(
                    "{} seed {}: test R2 {:.4}, test MSE {:.4}, complexity {}, size {}",
                    rec.strategy, rec.seed, rec.test_r2, rec.test_mse, rec.complexity, rec.size
                );
            }
        }
        Command::Compare(args) => {
            let spec = args.to_spec()?;
            let records = cmd_compare(&spec)?;
            print!("{}", final_scores_table(&spec.strategies, &records));
        }
        Command::Scaling(args) => {
            let spec = args.to_spec()?;
            print!("{}", scaling_csv(&cmd_scaling(&spec)?));
        }
    }
    Ok(())
}
