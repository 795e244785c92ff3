use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use netgain_cli::commands::{cmd_certify, cmd_compare, cmd_evaluate, cmd_generate, cmd_train, Layout};
use netgain_cli::{CliError, ExperimentConfig};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "netgain", version, about = "Train and certify networked operators with a prescribed L2 gain")]
struct Cli {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Override a config leaf, e.g. `--set training.epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the three-tank plant and write the dataset.
    Generate,
    /// Train the configured model and write checkpoints and the loss history.
    Train {
        /// Continue from this checkpoint up to `training.epochs`.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Check the gain certificate of a checkpoint and probe its empirical gain.
    Certify {
        /// Defaults to the final checkpoint of `train`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Open-loop prediction on the validation sequences.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset directory; defaults to the configured one.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Checkpoint to compare against; defaults to the untrained initialization when present.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Train every model size in the comparison grid and write the sweep CSV.
    Compare,
}

fn print<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Numeric(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let layout = Layout::new(&cfg);
    match cli.command {
        Command::Generate => print(&cmd_generate(&cfg)?),
        Command::Train { resume } => print(&cmd_train(&cfg, resume.as_deref())?),
        Command::Certify { checkpoint } => {
            let path = checkpoint.unwrap_or_else(|| layout.final_checkpoint());
            print(&cmd_certify(&cfg, &path)?)
        }
        Command::Evaluate {
            checkpoint,
            dataset,
            baseline,
        } => {
            let path = checkpoint.unwrap_or_else(|| layout.final_checkpoint());
            let data = dataset.unwrap_or_else(|| cfg.dataset_dir());
            let baseline = baseline.or_else(|| Some(layout.checkpoint(0)).filter(|p| p.exists()));
            print(&cmd_evaluate(&cfg, &path, &data, baseline.as_deref())?)
        }
        Command::Compare => print(&cmd_compare(&cfg)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
