//! `etdmpc`: train, evaluate, ablate, cross-score and aggregate from JSON configs.

mod ablate;
mod output;
mod runs;
mod studies;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "etdmpc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Where the run configuration comes from.
#[derive(Args, Clone)]
pub struct ConfigArgs {
    /// Run configuration JSON; unknown keys are rejected.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Named preset: efficienttdmpc-utd4, efficienttdmpc-utd1, bmpc-like or desk.
    #[arg(long)]
    pub preset: Option<String>,
    /// Environment for a preset.
    #[arg(long, default_value = "pendulum", conflicts_with = "config")]
    pub env: String,
    /// Seeds to run; replaces the configured seed list. Repeatable.
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    /// Override the number of environment steps.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent per seed; writes metrics, timing, checkpoint and replay snapshot.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint with the configured acting planner.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every variant of one ablation axis.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// ensemble, buffer_mode, aggregation, pessimism, reanalyze_budget, pessimism_scope or utd.
        #[arg(long)]
        axis: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score single-head and ensemble plans against the exact simulator on replay states.
    Crossscore {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        snapshot: PathBuf,
        /// Study configuration JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        states: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate metrics files into normalized curves with confidence bands and AUCs.
    Aggregate {
        /// `TASK=PATH` of a metrics CSV; repeat per seed and task.
        #[arg(long = "input", required = true)]
        inputs: Vec<String>,
        /// `TASK=C` normalization constant; give one per task or none.
        #[arg(long = "normalize")]
        normalize: Vec<String>,
        /// Reference AUC the benchmark AUC is divided by.
        #[arg(long)]
        reference_auc: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("ETDMPC_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("ETDMPC_THREADS={v:?} is not a count"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Train { config, out } => runs::train(&config, &out),
        Command::Evaluate {
            config,
            checkpoint,
            episodes,
            out,
        } => runs::evaluate(&config, &checkpoint, episodes, &out),
        Command::Ablate { config, axis, out } => ablate::ablate(&config, &axis, &out),
        Command::Crossscore {
            checkpoint,
            snapshot,
            config,
            seed,
            states,
            out,
        } => studies::crossscore(&checkpoint, &snapshot, config.as_deref(), seed, states, &out),
        Command::Aggregate {
            inputs,
            normalize,
            reference_auc,
            out,
        } => studies::aggregate(&inputs, &normalize, reference_auc, &out),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
