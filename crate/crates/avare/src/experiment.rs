//! Experiment orchestration: a JSON-configurable layer that builds a
//! problem, fans runs out over samplers and seeds, and writes result files.
//!
//! An experiment is described by [`ExperimentConfig`] (see the field docs
//! for the JSON shape and defaults). `run_experiment` executes one run per
//! (sampler, seed) pair — optionally in parallel, with results written in a
//! fixed order so output bytes never depend on scheduling — and produces:
//!
//! * `trace_<sampler>_<seed>.csv` — per-step columns for each finished run;
//! * `aggregate_<sampler>.csv` — per-step mean and sample standard
//!   деviation over finished seeds, keyed by data passes `t * m / N` so
//!   curves are comparable across batch sizes;
//! * `summary.json` — config digest, per-seed endpoints, aggregate
//!   endpoints, diverged seeds, and (in full metrics mode) the problem's
//!   effectiveness ratios.
//!
//! A diverged seed is recorded in the summary and skipped by aggregation;
//! it never aborts sibling runs. Identical config and seeds produce
//! byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_io::{
    self, normalize_features, parse_csv_dataset, parse_libsvm, write_summary_json,
    write_trace_csv, DataIoError, NormalizeMode, DEFAULT_MAX_DIM, SCHEMA_VERSION,
};
use crate::drivers::{self, Algorithm, DriverError, EstimatorKind, RunConfig, SamplerKind};
use crate::metrics::{effectiveness_ratios, EffectivenessRatios, MetricsError, MetricsMode, RunRecord};
use crate::problems::{make_synthetic, FiniteSumProblem, ModelKind, ProblemError};
use crate::schedules::{EpsilonSchedule, ScheduleError, StepSchedule};

/// Environment variable consulted for the default output root.
pub const OUT_DIR_ENV: &str = "AVARE_OUT";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config field `{field}`: {msg}")]
    Config { field: &'static str, msg: String },
    #[error("run failed for sampler {sampler:?}, seed {seed}: {source}")]
    Run {
        sampler: SamplerKind,
        seed: u64,
        source: DriverError,
    },
    #[error(transparent)]
    DataIo(#[from] DataIoError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

fn config_err(field: &'static str, msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config {
        field,
        msg: msg.into(),
    }
}

/// Where the examples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// Generated binary classification data (normal features, linear
    /// teacher, 5% label noise).
    Synthetic { n: usize, d: usize, seed: u64 },
    /// Parsed from a file on disk.
    File {
        path: PathBuf,
        format: FileFormat,
        #[serde(default)]
        has_header: bool,
        #[serde(default = "default_max_dim")]
        max_dim: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileFormat {
    Libsvm,
    Csv,
}

/// Run length: explicit steps, or passes over the data (`T = ceil(passes *
/// N / m)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationSpec {
    Steps(u64),
    DataPasses(f64),
}

/// Exploration-floor parameters (used by avare runs only). `c` defaults to
/// `N`; `delta` to 1. Setting `constant_step` (or an explicit `p_min`)
/// switches to the constant-step mode, whose defaults are `p_min = 1/(5N)`
/// and the largest admissible `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonParams {
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub p_min: Option<f64>,
    #[serde(default)]
    pub constant_step: bool,
}

fn default_delta() -> f64 {
    1.0
}

impl Default for EpsilonParams {
    fn default() -> Self {
        EpsilonParams {
            c: None,
            delta: default_delta(),
            p_min: None,
            constant_step: false,
        }
    }
}

impl EpsilonParams {
    fn compile(&self, m: usize, n: usize) -> Result<EpsilonSchedule, ScheduleError> {
        if self.constant_step || self.p_min.is_some() {
            let p_min = self.p_min.unwrap_or(1.0 / (5.0 * n as f64));
            let c = self
                .c
                .unwrap_or_else(|| 1.0 / (1.0 / n as f64 - p_min));
            EpsilonSchedule::constant_step(c, self.delta, m, p_min, n)
        } else {
            let c = self.c.unwrap_or(n as f64);
            if m > 1 {
                EpsilonSchedule::minibatch(c, self.delta, m, n)
            } else {
                EpsilonSchedule::single(c, self.delta, n)
            }
        }
    }
}

/// Step-size parameters. `benchmark` is the strongly-convex decaying
/// schedule `m / (2 N L + m mu t)` with `L` taken from the problem;
/// `constant` with `alpha: null` uses its `t = 0` value `m / (2 N L)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepParams {
    PowerDecay { e: f64, f: f64, beta: f64 },
    #[default]
    Benchmark,
    Constant { alpha: Option<f64> },
}

fn default_max_dim() -> usize {
    DEFAULT_MAX_DIM
}

fn default_mu() -> f64 {
    1.0
}

fn default_model() -> ModelKind {
    ModelKind::Logistic
}

fn default_algorithm() -> Algorithm {
    Algorithm::Sgd
}

fn default_samplers() -> Vec<SamplerKind> {
    vec![SamplerKind::Avare, SamplerKind::Uniform]
}

fn default_estimator() -> EstimatorKind {
    EstimatorKind::Single
}

fn default_batch() -> usize {
    1
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn default_metrics() -> MetricsMode {
    MetricsMode::Cheap
}

/// Complete experiment description. Every field except `dataset` and
/// `iterations` has a default matching the standard benchmark protocol
/// (logistic model, `mu = 1`, single-draw estimator, `C = N`, `delta = 1`,
/// zero-initialized norm table, seeds 0–9).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default = "default_model")]
    pub model: ModelKind,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default = "default_samplers")]
    pub samplers: Vec<SamplerKind>,
    #[serde(default = "default_estimator")]
    pub estimator: EstimatorKind,
    #[serde(default = "default_batch")]
    pub batch: usize,
    pub iterations: IterationSpec,
    #[serde(default)]
    pub epsilon: EpsilonParams,
    #[serde(default)]
    pub step: StepParams,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_metrics")]
    pub metrics: MetricsMode,
    #[serde(default)]
    pub normalize: NormalizeMode,
    #[serde(default)]
    pub h_init: f64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text)
            .map_err(|e| config_err("<json>", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(DataIoError::Io)?;
        Self::from_json(&text)
    }
}

/// A config resolved against its dataset: the problem is built, schedules
/// constructed, and every per-run configuration validated.
pub struct CompiledExperiment {
    pub problem: FiniteSumProblem,
    pub iterations: u64,
    pub epsilon: EpsilonSchedule,
    pub step: StepSchedule,
    /// Optimal objective value; present in full metrics mode.
    pub f_star: Option<f64>,
    pub seeds: Vec<u64>,
    pub digest: String,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Digest of the scientifically meaningful part of a config: everything
/// except the output directory, with the effective seed list substituted.
pub fn config_digest(config: &ExperimentConfig, seeds: &[u64]) -> String {
    let mut canonical = config.clone();
    canonical.out_dir = None;
    canonical.seeds = seeds.to_vec();
    let text = serde_json::to_string(&canonical).expect("config serializes");
    format!("{:016x}", fnv1a64(text.as_bytes()))
}

fn load_dataset(source: &DatasetSource) -> Result<crate::problems::Dataset, ExperimentError> {
    match source {
        DatasetSource::Synthetic { n, d, seed } => Ok(make_synthetic(*n, *d, *seed)?),
        DatasetSource::File {
            path,
            format,
            has_header,
            max_dim,
        } => {
            let text = fs::read_to_string(path).map_err(DataIoError::Io)?;
            Ok(match format {
                FileFormat::Libsvm => parse_libsvm(&text, *max_dim)?,
                FileFormat::Csv => parse_csv_dataset(&text, *has_header)?,
            })
        }
    }
}

/// Build just the problem a config describes: dataset load (or synthesis)
/// plus feature normalization.
pub fn build_problem(config: &ExperimentConfig) -> Result<FiniteSumProblem, ExperimentError> {
    let mut data = load_dataset(&config.dataset)?;
    normalize_features(&mut data, config.normalize);
    Ok(FiniteSumProblem::new(data, config.model, config.mu)?)
}

/// Validate a config end to end: load the dataset, build the problem and
/// schedules, and dry-check one run configuration per sampler. This is the
/// work behind a `validate` command, and the first phase of `run_experiment`.
pub fn compile(
    config: &ExperimentConfig,
    seeds: &[u64],
) -> Result<CompiledExperiment, ExperimentError> {
    if config.samplers.is_empty() {
        return Err(config_err("samplers", "at least one sampler is required"));
    }
    for (i, s) in config.samplers.iter().enumerate() {
        if config.samplers[..i].contains(s) {
            return Err(config_err("samplers", format!("duplicate entry {s:?}")));
        }
    }
    if seeds.is_empty() {
        return Err(config_err("seeds", "at least one seed is required"));
    }
    for (i, s) in seeds.iter().enumerate() {
        if seeds[..i].contains(s) {
            return Err(config_err("seeds", format!("duplicate seed {s}")));
        }
    }

    let problem = build_problem(config)?;
    let n = problem.len();

    let iterations = match config.iterations {
        IterationSpec::Steps(t) => t,
        IterationSpec::DataPasses(passes) => {
            if !passes.is_finite() || passes <= 0.0 {
                return Err(config_err("iterations", format!("data_passes = {passes} must be positive")));
            }
            (passes * n as f64 / config.batch as f64).ceil() as u64
        }
    };
    if iterations == 0 {
        return Err(config_err("iterations", "must be at least one step"));
    }

    let epsilon = config
        .epsilon
        .compile(config.batch, n)
        .map_err(|e| config_err("epsilon", e.to_string()))?;

    let classical_l = problem
        .smoothness_constants()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
        * n as f64;
    let step = match config.step {
        StepParams::PowerDecay { e, f, beta } => StepSchedule::power_decay(e, f, beta),
        StepParams::Benchmark => {
            StepSchedule::benchmark(config.batch, n, classical_l, config.mu)
        }
        StepParams::Constant { alpha } => StepSchedule::constant(alpha.unwrap_or_else(|| {
            config.batch as f64 / (2.0 * n as f64 * classical_l)
        })),
    }
    .map_err(|e| config_err("step", e.to_string()))?;

    let f_star = match config.metrics {
        MetricsMode::Full => {
            let x_star = problem.solve_minimizer(1e-10)?;
            Some(problem.full_loss(&x_star)?)
        }
        MetricsMode::Cheap => None,
    };

    let digest = config_digest(config, seeds);
    let compiled = CompiledExperiment {
        problem,
        iterations,
        epsilon,
        step,
        f_star,
        seeds: seeds.to_vec(),
        digest,
    };

    // Dry-validate one run config per sampler so field errors surface now.
    for &sampler in &config.samplers {
        run_config(config, &compiled, sampler, seeds[0])
            .validate()
            .map_err(|e| config_err("samplers", e.to_string()))?;
    }
    Ok(compiled)
}

fn run_config<'a>(
    config: &ExperimentConfig,
    compiled: &'a CompiledExperiment,
    sampler: SamplerKind,
    seed: u64,
) -> RunConfig<'a> {
    RunConfig {
        problem: &compiled.problem,
        sampler,
        estimator: config.estimator,
        batch: config.batch,
        iterations: compiled.iterations,
        epsilon: (sampler == SamplerKind::Avare).then(|| compiled.epsilon.clone()),
        step: compiled.step.clone(),
        seed,
        metrics: config.metrics,
        algorithm: config.algorithm,
        h_init: config.h_init,
        x0: None,
        f_star: compiled.f_star,
        digest: compiled.digest.clone(),
    }
}

/// Overrides a caller (typically the CLI) applies on top of the config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    /// Worker threads for the run fan-out; 0 or 1 means sequential.
    pub parallel: usize,
}

/// Paths of everything an experiment wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultFiles {
    pub out_dir: PathBuf,
    pub traces: Vec<PathBuf>,
    pub aggregates: Vec<PathBuf>,
    pub summary: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEndpoint {
    pub seed: u64,
    /// Final cumulative regret (full metrics mode only).
    pub final_cum_regret: Option<f64>,
    /// Final suboptimality (full metrics mode only).
    pub final_subopt: Option<f64>,
    /// Step at which the run diverged; the other fields are absent then.
    pub diverged_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSummary {
    pub sampler: SamplerKind,
    pub seeds: Vec<SeedEndpoint>,
    pub diverged_seeds: Vec<u64>,
    pub mean_final_cum_regret: Option<f64>,
    pub std_final_cum_regret: Option<f64>,
    pub mean_final_subopt: Option<f64>,
    pub std_final_subopt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub schema_version: u32,
    pub config_digest: String,
    pub iterations: u64,
    /// Data passes per step, `m / N`; multiply by `t` for the x-axis key.
    pub data_passes_per_step: f64,
    pub samplers: Vec<SamplerSummary>,
    /// Problem effectiveness ratios (full metrics mode only).
    pub ratios: Option<EffectivenessRatios>,
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn sampler_slug(kind: SamplerKind) -> &'static str {
    match kind {
        SamplerKind::Avare => "avare",
        SamplerKind::Uniform => "uniform",
        SamplerKind::Oracle => "oracle",
    }
}

fn resolve_out_dir(config: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    opts.out_dir
        .clone()
        .or_else(|| config.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_aggregate_csv(
    path: &Path,
    records: &[&RunRecord],
    iterations: u64,
    passes_per_step: f64,
) -> Result<(), DataIoError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "data_passes",
        "mean_cum_regret",
        "std_cum_regret",
        "mean_subopt",
        "std_subopt",
        "mean_dx_norm",
        "std_dx_norm",
    ])?;
    if records.is_empty() {
        writer.flush()?;
        return Ok(());
    }
    for k in 0..iterations as usize {
        let column = |f: &dyn Fn(&RunRecord) -> Option<f64>| -> (Option<f64>, Option<f64>) {
            let vals: Option<Vec<f64>> = records.iter().map(|r| f(r)).collect();
            match vals {
                Some(v) => {
                    let (m, s) = mean_std(&v);
                    (Some(m), Some(s))
                }
                None => (None, None),
            }
        };
        let (reg_m, reg_s) = column(&|r| r.steps[k].cum_regret);
        let (sub_m, sub_s) = column(&|r| r.steps[k].subopt);
        let (dx_m, dx_s) = column(&|r| Some(r.steps[k].dx_norm));
        writer.write_record([
            ((k as f64 + 1.0) * passes_per_step).to_string(),
            fmt_opt(reg_m),
            fmt_opt(reg_s),
            fmt_opt(sub_m),
            fmt_opt(sub_s),
            fmt_opt(dx_m),
            fmt_opt(dx_s),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Execute every (sampler, seed) run and write result files. Deterministic:
/// records depend only on the config, and files are written in a fixed
/// order regardless of `parallel`.
pub fn run_experiment(
    config: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<ResultFiles, ExperimentError> {
    let seeds = opts.seeds.clone().unwrap_or_else(|| config.seeds.clone());
    let compiled = compile(config, &seeds)?;
    let out_dir = resolve_out_dir(config, opts);
    fs::create_dir_all(&out_dir).map_err(DataIoError::Io)?;

    let jobs: Vec<(SamplerKind, u64)> = config
        .samplers
        .iter()
        .flat_map(|&s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();

    let execute = |&(sampler, seed): &(SamplerKind, u64)| {
        drivers::run(&run_config(config, &compiled, sampler, seed))
    };
    let outcomes: Vec<Result<RunRecord, DriverError>> = if opts.parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.parallel)
            .build()
            .map_err(|e| ExperimentError::ThreadPool(e.to_string()))?;
        pool.install(|| {
            use rayon::prelude::*;
            jobs.par_iter().map(execute).collect()
        })
    } else {
        jobs.iter().map(execute).collect()
    };

    let mut traces = Vec::new();
    let mut aggregates = Vec::new();
    let mut sampler_summaries = Vec::new();
    let passes_per_step = config.batch as f64 / compiled.problem.len() as f64;

    let mut outcomes = outcomes.into_iter();
    for &sampler in &config.samplers {
        let mut finished: Vec<RunRecord> = Vec::new();
        let mut endpoints = Vec::new();
        let mut diverged = Vec::new();
        for &seed in &seeds {
            match outcomes.next().expect("one outcome per job") {
                Ok(record) => {
                    let path = out_dir.join(format!("trace_{}_{seed}.csv", sampler_slug(sampler)));
                    write_trace_csv(&path, &record.steps)?;
                    traces.push(path);
                    let last = record.steps.last().expect("at least one step");
                    endpoints.push(SeedEndpoint {
                        seed,
                        final_cum_regret: last.cum_regret,
                        final_subopt: last.subopt,
                        diverged_at: None,
                    });
                    finished.push(record);
                }
                Err(DriverError::Diverged { t, .. }) => {
                    diverged.push(seed);
                    endpoints.push(SeedEndpoint {
                        seed,
                        final_cum_regret: None,
                        final_subopt: None,
                        diverged_at: Some(t),
                    });
                }
                Err(source) => return Err(ExperimentError::Run { sampler, seed, source }),
            }
        }

        let agg_path = out_dir.join(format!("aggregate_{}.csv", sampler_slug(sampler)));
        let finished_refs: Vec<&RunRecord> = finished.iter().collect();
        write_aggregate_csv(&agg_path, &finished_refs, compiled.iterations, passes_per_step)?;
        aggregates.push(agg_path);

        let finals = |f: &dyn Fn(&SeedEndpoint) -> Option<f64>| -> (Option<f64>, Option<f64>) {
            let vals: Vec<f64> = endpoints.iter().filter_map(f).collect();
            if vals.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&vals);
                (Some(m), Some(s))
            }
        };
        let (reg_m, reg_s) = finals(&|e| e.final_cum_regret);
        let (sub_m, sub_s) = finals(&|e| e.final_subopt);
        sampler_summaries.push(SamplerSummary {
            sampler,
            seeds: endpoints,
            diverged_seeds: diverged,
            mean_final_cum_regret: reg_m,
            std_final_cum_regret: reg_s,
            mean_final_subopt: sub_m,
            std_final_subopt: sub_s,
        });
    }

    let ratios = match config.metrics {
        MetricsMode::Full => Some(effectiveness_ratios(&compiled.problem, 1e-10)?),
        MetricsMode::Cheap => None,
    };
    let summary = ExperimentSummary {
        schema_version: SCHEMA_VERSION,
        config_digest: compiled.digest.clone(),
        iterations: compiled.iterations,
        data_passes_per_step: passes_per_step,
        samplers: sampler_summaries,
        ratios,
    };
    let summary_path = out_dir.join("summary.json");
    write_summary_json(&summary_path, &summary)?;

    Ok(ResultFiles {
        out_dir,
        traces,
        aggregates,
        summary: summary_path,
    })
}

/// Reload the summary an experiment wrote.
pub fn read_summary(path: &Path) -> Result<ExperimentSummary, ExperimentError> {
    let summary: ExperimentSummary = data_io::read_summary_json(path)?;
    if summary.schema_version != SCHEMA_VERSION {
        return Err(config_err(
            "schema_version",
            format!("file has {}, expected {SCHEMA_VERSION}", summary.schema_version),
        ));
    }
    Ok(summary)
}
