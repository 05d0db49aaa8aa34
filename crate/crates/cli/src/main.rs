use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use fbrd_cli::config::{Command, RunConfig};
use fbrd_cli::run::{run, EXIT_OK, EXIT_VALIDATION};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sub {
    Spectrum,
    Waterfill,
    Rate,
    Limit,
    Approx,
    Converse,
    Achievability,
    SimulateCodec,
    Aep,
    Sweep,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Spectrum => Command::Spectrum,
            Sub::Waterfill => Command::Waterfill,
            Sub::Rate => Command::Rate,
            Sub::Limit => Command::Limit,
            Sub::Approx => Command::Approx,
            Sub::Converse => Command::Converse,
            Sub::Achievability => Command::Achievability,
            Sub::SimulateCodec => Command::SimulateCodec,
            Sub::Aep => Command::Aep,
            Sub::Sweep => Command::Sweep,
        }
    }
}

/// Finite-blocklength rate-distortion bounds for Gaussian sources.
#[derive(Debug, Parser)]
#[command(name = "fbrd", version)]
struct Cli {
    /// Computation to run.
    #[arg(value_enum)]
    command: Sub,
    /// TOML run configuration.
    #[arg(short, long)]
    config: PathBuf,
    /// Worker threads for Monte Carlo stages (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Result file; overrides FBRD_OUTPUT and the config's output path.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match RunConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("invalid configuration: {e}");
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
    };
    match run(cfg, cli.command.into(), cli.threads, cli.output) {
        Ok(path) => {
            eprintln!("wrote {}", path.display());
            ExitCode::from(EXIT_OK as u8)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
