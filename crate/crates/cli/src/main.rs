//! Command-line driver for adaptive surrogate training runs.
//!
//! All four subcommands read a single JSON configuration file (the same
//! document the library's [`RunConfig`] parses) and share the override
//! flags `--seed`, `--out`, and `--max-work`:
//!
//! * `run` — joint position/tolerance adaptation until the global error
//!   estimate meets the configured target.
//! * `baseline` — position-only adaptation at the fixed evaluation
//!   tolerance `baseline_tolerance` from the config.
//! * `reliability` — `run`, then a study comparing the local error
//!   estimate against observed reconstruction discrepancies.
//! * `reconstruct` — `run`, then MAP identification of
//!   `reconstruct_target` from its exact observation.
//!
//! The process exits with code 0 when the run converged, 2 when it
//! stopped on a cap (work, iterations, or candidate pool), and 1 on any
//! error.

// `!(x > 0.0)` rejects NaN flag values; `x <= 0.0` would accept them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use adagp::driver::{
    adaptive_run, position_adaptive_run, reconstruct_true_parameter, reliability_study,
    write_artifacts, write_artifacts_with, write_reliability, RunArtifacts, RunConfig, RunStatus,
};
use adagp::{Error, Result};

/// Adaptive Gaussian-process surrogates for expensive forward simulators.
#[derive(Debug, Parser)]
#[command(name = "adagp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Adapt evaluation positions and tolerances until the error target is met.
    Run(CommonArgs),
    /// Position-only baseline at the config's fixed `baseline_tolerance`.
    Baseline(CommonArgs),
    /// Run, then compare estimated against observed reconstruction errors.
    Reliability(CommonArgs),
    /// Run, then reconstruct the config's `reconstruct_target` parameter.
    Reconstruct(CommonArgs),
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Command::Run(a)
            | Command::Baseline(a)
            | Command::Reliability(a)
            | Command::Reconstruct(a) => a,
        }
    }
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Path to the JSON run configuration.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Master seed, overriding the config.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    /// Directory for run artifacts, overriding the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Total-work cap, overriding the config.
    #[arg(long, value_name = "X")]
    max_work: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(status) => ExitCode::from(exit_code(status)),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}

/// 0 on convergence, 2 when a cap stopped the run first.
fn exit_code(status: RunStatus) -> u8 {
    match status {
        RunStatus::Converged => 0,
        RunStatus::BudgetExhausted
        | RunStatus::IterationCapReached
        | RunStatus::CandidatesExhausted => 2,
    }
}

fn execute(command: &Command) -> Result<RunStatus> {
    let cfg = load_config(command.args())?;
    match command {
        Command::Run(_) => {
            let artifacts = adaptive_run(&cfg)?;
            if let Some(dir) = cfg.output_dir.as_deref() {
                write_artifacts(&cfg, &artifacts, dir)?;
            }
            report(&artifacts);
            Ok(artifacts.status)
        }
        Command::Baseline(_) => {
            let eps = cfg.baseline_tolerance.ok_or_else(|| {
                Error::config("the baseline subcommand needs `baseline_tolerance` in the config")
            })?;
            let artifacts = position_adaptive_run(&cfg, eps)?;
            if let Some(dir) = cfg.output_dir.as_deref() {
                write_artifacts(&cfg, &artifacts, dir)?;
            }
            report(&artifacts);
            Ok(artifacts.status)
        }
        Command::Reliability(_) => {
            let study = cfg.reliability.ok_or_else(|| {
                Error::config("the reliability subcommand needs a `reliability` block")
            })?;
            let artifacts = adaptive_run(&cfg)?;
            let forward = cfg.build_forward()?;
            let rows = reliability_study(
                &cfg,
                &artifacts.model,
                forward.as_ref(),
                study.n_points,
                study.noise_draws,
            )?;
            let usable = rows.iter().filter(|r| !r.failed).count();
            if let Some(dir) = cfg.output_dir.as_deref() {
                write_artifacts(&cfg, &artifacts, dir)?;
                write_reliability(&rows, forward.param_dim(), dir)?;
            }
            report(&artifacts);
            println!("reliability rows: {usable}/{} usable", rows.len());
            Ok(artifacts.status)
        }
        Command::Reconstruct(_) => {
            let target = cfg.reconstruct_target.clone().ok_or_else(|| {
                Error::config("the reconstruct subcommand needs `reconstruct_target`")
            })?;
            let artifacts = adaptive_run(&cfg)?;
            let forward = cfg.build_forward()?;
            let p_true = DVector::from_row_slice(&target);
            let rec = reconstruct_true_parameter(
                &artifacts.model,
                forward.as_ref(),
                &cfg.sigma_l(),
                &p_true,
            )?;
            if let Some(dir) = cfg.output_dir.as_deref() {
                write_artifacts_with(&cfg, &artifacts, Some(&rec), dir)?;
            }
            report(&artifacts);
            let map: Vec<f64> = rec.p_map.iter().copied().collect();
            let std: Vec<f64> = rec.posterior_std.iter().copied().collect();
            println!("reconstruction: p_map = {map:?}, posterior std = {std:?}");
            Ok(artifacts.status)
        }
    }
}

/// Reads the config file and applies the command-line overrides.
fn load_config(args: &CommonArgs) -> Result<RunConfig> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(cap) = args.max_work {
        if !(cap > 0.0) {
            return Err(Error::config("--max-work must be positive"));
        }
        cfg.max_total_work = cap;
    }
    if let Some(dir) = &args.out {
        cfg.output_dir = Some(dir.clone());
    }
    Ok(cfg)
}

fn report(artifacts: &RunArtifacts) {
    let status = match artifacts.status {
        RunStatus::Converged => "converged",
        RunStatus::BudgetExhausted => "budget-exhausted",
        RunStatus::IterationCapReached => "iteration-cap-reached",
        RunStatus::CandidatesExhausted => "candidates-exhausted",
    };
    println!(
        "{status}: {} iterations, {} design points, global error {:.6e}, total work {:.6e}",
        artifacts.iterations(),
        artifacts.model.train().n(),
        artifacts.final_error,
        artifacts.total_work,
    );
}
