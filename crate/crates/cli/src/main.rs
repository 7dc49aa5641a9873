mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// Contrast-injection simulator: hemodynamics, transport, synthetic
/// angiograms and calibration.
#[derive(Debug, Parser)]
#[command(name = "angiosim", version)]
pub struct Cli {
    /// Run configuration (TOML). Relative paths inside resolve against its directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Optimiser seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; overrides the environment and the config.
    #[arg(long, global = true, env = "ANGIOSIM_THREADS")]
    pub threads: Option<usize>,
    /// Hemodynamic time step, s (at most 1e-3).
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-loop hemodynamics: waveform CSV and metrics.
    Simulate,
    /// Full injection run: frames, masks, CIP and features.
    Angiogram,
    /// Stage 1 (heart and aorta) or stage 2 (coronary grid search).
    Calibrate {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
    },
    /// Parameter sensitivity studies.
    Sensitivity {
        #[arg(value_enum)]
        study: Study,
    },
    /// Shape features of a CIP CSV.
    Features {
        /// CIP CSV with `time_s,cip` columns.
        #[arg(long)]
        cip: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Study {
    /// One coronary parameter family at a time.
    Individual,
    /// All coronary resistances together.
    Uniform,
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<angiosim::Error> for CliError {
    fn from(e: angiosim::Error) -> Self {
        Self {
            code: if e.is_numerical() { 3 } else { 2 },
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
