mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ConfigArgs;

/// Joint item recommendation and attribute inference on user-item graphs.
#[derive(Parser)]
#[command(name = "agcn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, log and reports.
    Train {
        #[command(flatten)]
        args: ConfigArgs,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Also report BPR, label propagation and majority-class baselines.
        #[arg(long)]
        baselines: bool,
    },
    /// Evaluate a checkpoint on the validation and test splits.
    Evaluate {
        #[command(flatten)]
        args: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train and evaluate every point of a depth/attribute-weight grid.
    Sweep {
        #[command(flatten)]
        args: ConfigArgs,
    },
    /// Predict the masked attributes with a trained checkpoint.
    InferAttributes {
        #[command(flatten)]
        args: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Filter, split and mask a dataset into a frozen bundle.
    PrepareData {
        #[command(flatten)]
        args: ConfigArgs,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { args, resume, baselines } => commands::train(&args.resolve()?, resume, baselines),
        Command::Evaluate { args, checkpoint } => commands::evaluate(&args.resolve()?, &checkpoint),
        Command::Sweep { args } => commands::sweep(&args.resolve()?),
        Command::InferAttributes { args, checkpoint } => commands::infer_attributes(&args.resolve()?, &checkpoint),
        Command::PrepareData { args } => commands::prepare_data(&args.resolve()?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
