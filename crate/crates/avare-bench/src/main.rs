//! Command-line benchmark harness: runs configured experiments comparing
//! adaptive, uniform, and oracle importance sampling for SGD/SGLD, and
//! inspects problems and configs without running them.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use avare::experiment::{self, ExperimentConfig, ExperimentSummary, RunOptions};
use avare::metrics::effectiveness_ratios;

#[derive(Parser)]
#[command(
    name = "avare-bench",
    version,
    about = "Benchmark harness for adaptive importance sampling in SGD/SGLD"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (sampler, seed) combination and write result files.
    Run {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config's `out_dir` and the
        /// AVARE_OUT environment variable.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds overriding the config's list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Worker threads for the run fan-out (0 or 1 = sequential).
        /// Output files are identical either way.
        #[arg(long, default_value_t = 0)]
        parallel: usize,
    },
    /// Print the problem's effectiveness ratios (smoothness and variance).
    Ratios {
        /// Experiment config (JSON); only the problem fields are used.
        #[arg(long)]
        config: PathBuf,
    },
    /// Check a config end to end (dataset, schedules, run parameters)
    /// without running it.
    Validate {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
    },
    /// List the available samplers, estimators, and algorithms.
    Samplers,
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn fmt_stat(mean: Option<f64>, std: Option<f64>) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{m:.6e} +- {s:.3e}"),
        _ => "-".to_string(),
    }
}

fn print_summary(summary: &ExperimentSummary, out_dir: &Path) {
    println!("config digest {}", summary.config_digest);
    println!(
        "{} steps ({:.3} data passes); results in {}",
        summary.iterations,
        summary.iterations as f64 * summary.data_passes_per_step,
        out_dir.display()
    );
    println!(
        "{:<10} {:>6} {:>9}  {:<24} {:<24}",
        "sampler", "seeds", "diverged", "final regret (mean+-std)", "final subopt (mean+-std)"
    );
    for s in &summary.samplers {
        println!(
            "{:<10} {:>6} {:>9}  {:<24} {:<24}",
            format!("{:?}", s.sampler).to_lowercase(),
            s.seeds.len(),
            s.diverged_seeds.len(),
            fmt_stat(s.mean_final_cum_regret, s.std_final_cum_regret),
            fmt_stat(s.mean_final_subopt, s.std_final_subopt),
        );
    }
    if let Some(r) = &summary.ratios {
        println!(
            "effectiveness ratios: smoothness {:.4}, variance {:.4}",
            r.smoothness, r.variance
        );
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            out,
            seeds,
            parallel,
        } => {
            let cfg = load_config(&config)?;
            let opts = RunOptions {
                out_dir: out,
                seeds,
                parallel,
            };
            let files = experiment::run_experiment(&cfg, &opts)?;
            let summary = experiment::read_summary(&files.summary)?;
            print_summary(&summary, &files.out_dir);
            println!(
                "wrote {} trace files, {} aggregates, {}",
                files.traces.len(),
                files.aggregates.len(),
                files.summary.display()
            );
        }
        Command::Ratios { config } => {
            let cfg = load_config(&config)?;
            let problem = experiment::build_problem(&cfg)?;
            let r = effectiveness_ratios(&problem, 1e-10)?;
            println!(
                "n {} d {}: smoothness ratio {:.6}, variance ratio {:.6}",
                problem.len(),
                problem.dim(),
                r.smoothness,
                r.variance
            );
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            let compiled = experiment::compile(&cfg, &cfg.seeds)?;
            println!(
                "config ok: {} examples, {} steps, {} samplers x {} seeds, digest {}",
                compiled.problem.len(),
                compiled.iterations,
                cfg.samplers.len(),
                compiled.seeds.len(),
                compiled.digest
            );
        }
        Command::Samplers => {
            println!("samplers:   avare | uniform | oracle");
            println!("estimators: single | minibatch_wr | minibatch_wor");
            println!("algorithms: sgd | sgld");
        }
    }
    Ok(())
}
