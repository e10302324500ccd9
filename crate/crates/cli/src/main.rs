//! `mdmixer` command-line interface.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CliError, CliResult};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "mdmixer", version, about = "Multi-granularity MLP forecaster: train, evaluate, inspect")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed, then score each on the test split.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to `out_dir` from the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Train this seed only, overriding the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint on the test split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forecast one test window and export per-granularity outputs and gate weights.
    Forecast {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Index into the test split's windows.
        #[arg(long)]
        window: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients against central finite differences at f64.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the gate's head-by-channel weight heatmap averaged over test windows.
    ExportWeights {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset CSV.
    Synth {
        /// two_scale, multiscale or sinusoid.
        #[arg(long, default_value = "multiscale")]
        preset: String,
        #[arg(long, default_value_t = 4000)]
        length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(path: &Path) -> CliResult<RunConfig> {
    RunConfig::load(path).map_err(|e| match e {
        mdmixer::Error::Io { source, .. } => CliError::Usage(format!("cannot read config {}: {source}", path.display())),
        other => other.into(),
    })
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { config, out, seed } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            commands::train(cfg, out.as_deref())
        }
        Command::Eval { config, checkpoint, out } => commands::eval(load(&config)?, &checkpoint, out.as_deref()),
        Command::Forecast { config, checkpoint, window, out } => {
            commands::forecast(load(&config)?, &checkpoint, window, out.as_deref())
        }
        Command::Gradcheck { config, seed, out } => commands::gradcheck_cmd(load(&config)?, seed, out.as_deref()),
        Command::ExportWeights { config, checkpoint, out } => {
            commands::export_weights(load(&config)?, &checkpoint, out.as_deref())
        }
        Command::Synth { preset, length, seed, out } => commands::synth(&preset, length, seed, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(CliError::exit_code(&e) as u8)
        }
    }
}
