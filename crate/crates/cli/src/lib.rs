//! Command-line front end: `analyze`, `design`, `simulate` and `sweep`.
//!
//! Inputs are TOML files (see [`config`]); outputs are CSV tables with a
//! header row and pretty-printed JSON reports, all deterministic for fixed
//! inputs.

pub mod commands;
pub mod config;
pub mod output;
pub mod si;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use llc_inverter::analysis::AnalysisError;
use llc_inverter::design::DesignError;
use llc_inverter::fha::FhaError;
use llc_inverter::sim::SimError;
use llc_inverter::SimMode;
use thiserror::Error;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "LLCINV_OUT_DIR";

/// Output directory when neither flag, config nor environment set one.
pub const DEFAULT_OUT_DIR: &str = "llcinv-out";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// Process exit status: 3 for configuration problems, 4 for numeric
    /// failures, 1 for anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Io { .. } => 1,
        }
    }
}

impl From<FhaError> for CliError {
    fn from(e: FhaError) -> Self {
        match e {
            FhaError::Infeasible { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) | SimError::Schedule(_) => CliError::Config(e.to_string()),
            SimError::Numeric { .. } => CliError::Numeric(e.to_string()),
            SimError::Fha(e) => e.into(),
        }
    }
}

impl From<DesignError> for CliError {
    fn from(e: DesignError) -> Self {
        match e {
            DesignError::Invalid(_) | DesignError::EmptyBand { .. } => CliError::Config(e.to_string()),
            DesignError::Infeasible(_) => CliError::Numeric(e.to_string()),
            DesignError::Fha(e) => e.into(),
            DesignError::Sim(e) => e.into(),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

/// How a command finished when it did not fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// The design loop ran to completion but found no feasible design.
    Infeasible,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::Infeasible => 2,
        }
    }
}

fn parse_seconds(s: &str) -> Result<f64, String> {
    si::parse(s)
}

#[derive(Debug, Clone, Parser)]
#[command(name = "llcinv", version, about = "LLC resonant inverter design, simulation and analysis")]
pub struct Cli {
    /// Run configuration (TOML); reference-design defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Canned schedule: c1-c4, c5-c8 or c9-c12.
    #[arg(long, global = true, value_name = "NAME")]
    pub preset: Option<String>,
    #[arg(long, global = true, value_name = "switched|envelope")]
    pub mode: Option<SimMode>,
    /// Output directory [default: $LLCINV_OUT_DIR, then ./llcinv-out].
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Integration step, e.g. 1e-7 or 100n.
    #[arg(long, global = true, value_name = "SECONDS", value_parser = parse_seconds)]
    pub dt: Option<f64>,
    /// Worker threads for `sweep`.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Gain and impedance-angle curve tables.
    Analyze,
    /// Iterative design with a final switched-mode validation.
    Design,
    /// Time-domain run with waveform export and metrics.
    Simulate {
        /// Write waveforms as binary columns instead of CSV.
        #[arg(long)]
        binary: bool,
    },
    /// Metrics over a grid of parameter values.
    Sweep,
}

/// Runs the parsed command. `env_out` is the value of [`OUT_DIR_ENV`].
pub fn run(cli: &Cli, env_out: Option<PathBuf>) -> Result<Outcome, CliError> {
    let ctx = commands::Context::new(cli, env_out)?;
    match cli.command {
        Command::Analyze => commands::analyze(&ctx),
        Command::Design => commands::design(&ctx),
        Command::Simulate { binary } => commands::simulate(&ctx, binary),
        Command::Sweep => commands::sweep(&ctx),
    }
}
