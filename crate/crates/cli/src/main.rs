//! `ftree`: batch runner for tree-realization experiments.
//!
//! Exit status: 0 success, 1 invalid input, 2 negative outcome (no
//! realization, no positive interval, failed lower bound), 3 numerical
//! non-convergence.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{parse_phi, ExperimentConfig, MeasureSource, Source};

#[derive(Debug, Parser)]
#[command(
    name = "ftree",
    version,
    about = "Tree realizations in discretized fractal sets",
    allow_negative_numbers = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON); flags override its fields
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    measure: Option<PathBuf>,
    #[arg(long, global = true)]
    tree: Option<PathBuf>,
    /// Family name or JSON object
    #[arg(long, global = true)]
    phi: Option<String>,
    #[arg(long, global = true)]
    t: Option<f64>,
    #[arg(long, global = true)]
    eps: Option<f64>,
    #[arg(long = "t-min", global = true)]
    t_min: Option<f64>,
    #[arg(long = "t-max", global = true)]
    t_max: Option<f64>,
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Report path (stdout when absent)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    budget: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a product Cantor measure
    GenMeasure,
    /// Lower bound, operator norm, refinement and Monge-Ampere checks
    Check,
    /// Scan J(t) over a gap grid
    Scan,
    /// Tree energy before and after refinement
    TreeEnergy,
    /// Search for a realization of a tree at gap t
    Realize,
    /// Wrist decomposition of a tree
    Wrist,
    /// Energy of a tree of configuration hyperedges
    ConfigEnergy,
    /// Annulus energies and scale operator norms
    Spectral,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenMeasure => "gen-measure",
            Command::Check => "check",
            Command::Scan => "scan",
            Command::TreeEnergy => "tree-energy",
            Command::Realize => "realize",
            Command::Wrist => "wrist",
            Command::ConfigEnergy => "config-energy",
            Command::Spectral => "spectral",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(ftree_core::Error),
    Io(std::io::Error),
}

impl From<ftree_core::Error> for CliError {
    fn from(e: ftree_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if !e.is_input_error() => 3,
            _ => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

/// Result of a command that ran to completion.
pub enum Outcome {
    Success,
    Negative(String),
}

fn merged_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = &cli.measure {
        cfg.measure = Some(MeasureSource::Other(Source::Path(p.clone())));
    }
    if let Some(p) = &cli.tree {
        cfg.tree = Some(Source::Path(p.clone()));
    }
    if let Some(phi) = &cli.phi {
        cfg.kernel.phi = Some(parse_phi(phi)?);
    }
    macro_rules! take {
        ($($field:ident => $target:expr),*) => {
            $(if let Some(v) = cli.$field { $target = Some(v); })*
        };
    }
    take!(t => cfg.kernel.t, eps => cfg.kernel.eps, t_min => cfg.t_min, t_max => cfg.t_max,
        steps => cfg.steps, tol => cfg.tol, threshold => cfg.threshold, seed => cfg.seed,
        budget => cfg.budget);
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let cfg = merged_config(cli)?;
    commands::execute(cli.command, &cfg, cli.out.as_deref())
}

fn main() -> ExitCode {
    // clap reports usage errors with status 2, which is reserved here
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Negative(msg)) => {
            eprintln!("{}: {msg}", cli.command.name());
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
