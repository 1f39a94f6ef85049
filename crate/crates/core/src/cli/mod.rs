//! Experiment runner: config parsing, checkpoints, artifacts and the
//! `lps` command line.

pub mod checkpoint;
pub mod config;
pub mod report;
pub mod run;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::ExperimentConfig;
pub use report::{report, verify};
pub use run::{run_experiment, run_single, RunOptions, RunSummary};

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "lps",
    about = "Lifelong learning by pruning and mask-based sharing"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a task sequence and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's root seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Share-ratio sweep, percentages (comma separated).
        #[arg(long, value_delimiter = ',', conflicts_with = "sweep_capacity")]
        sweep_beta: Option<Vec<f64>>,
        /// Capacity-fraction sweep, percentages (comma separated).
        #[arg(long, value_delimiter = ',')]
        sweep_capacity: Option<Vec<f64>>,
        /// Continue from a checkpoint written by the same configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop once this task is committed.
        #[arg(long)]
        stop_after: Option<usize>,
        #[arg(long)]
        quiet: bool,
    },
    /// Summarize the artifacts of a run or sweep directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the partition invariant suite on a checkpoint.
    Verify { checkpoint: PathBuf },
}

/// Executes a parsed command line, returning what should go to stdout.
pub fn execute(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            sweep_beta,
            sweep_capacity,
            resume,
            stop_after,
            quiet,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if sweep_beta.is_some() || sweep_capacity.is_some() {
                cfg.sweep_beta = sweep_beta;
                cfg.sweep_capacity = sweep_capacity;
            }
            cfg.validate()?;
            let summaries = run_experiment(
                &cfg,
                &RunOptions {
                    resume,
                    stop_after,
                    quiet,
                },
            )?;
            Ok(summaries.iter().map(|s| s.summary_line() + "\n").collect())
        }
        Command::Report { out } => report(&out),
        Command::Verify { checkpoint } => {
            let r = verify(&checkpoint)?;
            if r.all_passed() {
                Ok(r.to_string())
            } else {
                Err(Error::Checkpoint {
                    path: checkpoint,
                    reason: format!("invariant violations\n{r}"),
                })
            }
        }
    }
}
