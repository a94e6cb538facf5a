//! `sfm`: simulate, train, evaluate and plot survival function matching models.

mod commands;
mod config;
mod error;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ModelKind, Overrides, RunConfig, OUT_DIR_ENV};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "sfm", version, about = "Survival function matching")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    model: Option<ModelKind>,
    /// Output directory; beats both the configuration and $SFM_OUT_DIR.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset and its oracle sidecar.
    Simulate,
    /// Fit a model and write the checkpoint and loss history.
    Train,
    /// Write the evaluation report for the test split.
    Evaluate,
    /// Export KM (and DKM when a checkpoint exists) survival curves.
    Curves {
        #[arg(long)]
        svg: bool,
    },
    /// Export calibration points and print the slope.
    Calibration {
        #[arg(long)]
        svg: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let over = Overrides {
        seed: cli.seed,
        model: cli.model,
        out: cli.out,
        env_out: std::env::var_os(OUT_DIR_ENV).map(PathBuf::from),
    };
    let cfg = RunConfig::load(&path, &over)?;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Train => commands::train_model(&cfg),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::Curves { svg } => commands::curves(&cfg, svg),
        Command::Calibration { svg } => commands::calibration(&cfg, svg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let line = msg.lines().next().unwrap_or_default();
            eprintln!("error[usage]: {}", line.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            e.exit_code()
        }
    }
}
