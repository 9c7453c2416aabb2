//! Command-line front end: run experiments, dump population moments, and
//! run the invariant self-test.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use exp4stab::harness::{build_setup, run_experiment, write_outputs, ExperimentConfig, Workers};
use exp4stab::selftest::run_selftest;
use serde_json::json;

#[derive(Parser)]
#[command(name = "exp4stab", version, about = "Penalized EXP4 inference simulation lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo experiment and write the result files.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed (overrides `master_seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads, a positive integer or `auto`.
        #[arg(long)]
        workers: Option<Workers>,
    },
    /// Print the estimated per-expert second moments, the loss vector and
    /// the eigenvalue floor as JSON.
    Moments {
        #[arg(long)]
        config: PathBuf,
    },
    /// Check the algorithmic invariants on random instances.
    Selftest {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        instances: usize,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    cfg.apply_env_overrides()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            workers,
        } => {
            let mut cfg = load(&config)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            if let Some(seed) = seed {
                cfg.master_seed = seed;
            }
            if let Some(w) = workers {
                cfg.run.worker_count = w;
            }
            log::info!(
                "running {} trials of T = {} on {} workers",
                cfg.run.n_runs,
                cfg.problem.horizon,
                cfg.run.worker_count.resolve()
            );
            let result = run_experiment(&cfg)?;
            let files = write_outputs(&result, &cfg.output_dir)?;
            for r in &result.coverage {
                println!(
                    "{:<4} alpha={:<5} coverage={:.4} (se {:.4}) mean_width={:.5}",
                    r.method.name(),
                    r.alpha,
                    r.coverage,
                    r.coverage_se,
                    r.mean_width
                );
            }
            if let Some(n) = result.normality {
                println!(
                    "pivot: mean={:.4} variance={:.4} ks={:.4} (n={})",
                    n.mean, n.variance, n.ks_distance, n.n_trials
                );
            }
            for f in files {
                log::info!("wrote {}", f.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Moments { config } => {
            let mut cfg = load(&config)?;
            cfg.experts.redraw_per_trial = false;
            let setup = build_setup(&cfg)?;
            let ctx = setup.shared.expect("experts are shared");
            let m = &ctx.moments;
            let sigma: Vec<Vec<Vec<f64>>> = m
                .sigma
                .iter()
                .map(|s| s.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect();
            let dump = json!({
                "n_samples": m.n_samples,
                "seed": m.seed,
                "digest": m.digest(),
                "gbar": m.gbar,
                "lambda_floor": m.lambda_floor(),
                "min_eigenvalues": m.min_eigenvalues(),
                "w_star": ctx.w_star.as_slice(),
                "sigma": sigma,
            });
            println!("{}", serde_json::to_string_pretty(&dump)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest { seed, instances } => {
            let results = run_selftest(seed, instances);
            for r in &results {
                println!("{r}");
            }
            Ok(if results.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}
