//! Batch command-line front end: config resolution, experiment
//! orchestration, run-directory persistence, and sweep management.
//!
//! Exit codes: 0 success, 2 config/validation error, 3 data-generation
//! failure, 4 training failure.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: String) -> Self {
        CliError { code: 2, message }
    }

    pub fn generation(message: String) -> Self {
        CliError { code: 3, message }
    }

    pub fn training(message: String) -> Self {
        CliError { code: 4, message }
    }

    pub fn from_config(e: lindbladfit::Error) -> Self {
        CliError::config(e.to_string())
    }

    pub fn from_generation(e: lindbladfit::Error) -> Self {
        CliError::generation(e.to_string())
    }

    pub fn from_training(e: lindbladfit::Error) -> Self {
        CliError::training(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "lindbladfit",
    about = "Learn open-system generators from random-Pauli shot data",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a ground truth and generate a shot dataset.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides [output].dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed (overrides [seeds].master).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on a dataset and persist the run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a completed run against the dataset's ground truth.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Infidelity horizon as a multiple of the training window.
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Scan the loss over a random orthogonal plane in parameter space.
    Landscape {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        /// Subspace letters: H (Hamiltonian), L (rates), N (neural), e.g. HL.
        #[arg(long, default_value = "H")]
        subspace: String,
        /// Snapshot to scan around: init, final, or an epoch number.
        #[arg(long, default_value = "init")]
        epoch: String,
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run or resume the full experiment grid of a sweep config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Bounded number of parallel workers.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData { config, out, seed } => {
            commands::cmd_gen_data(config, out.as_deref(), *seed)
        }
        Command::Train { config, dataset, out } => {
            commands::cmd_train(config, dataset, out.as_deref())
        }
        Command::Eval { run, dataset, horizon } => commands::cmd_eval(run, dataset, *horizon),
        Command::Landscape { config, run, dataset, subspace, epoch, radius, grid, out } => {
            commands::cmd_landscape(
                config.as_deref(),
                run.as_deref(),
                dataset,
                subspace,
                epoch,
                *radius,
                *grid,
                out.as_deref(),
            )
        }
        Command::Sweep { config, workers, out } => {
            commands::cmd_sweep(config, *workers, out.as_deref())
        }
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}
