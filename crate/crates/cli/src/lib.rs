//! Command-line front end: loads a scenario, writes the run manifest, runs one
//! pipeline stage and exports CSV tables, SVG plots and a text report.

mod commands;
pub mod output;
pub mod svg;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use sideband::scenario::{Resolved, Scenario};

pub use output::Run;

#[derive(Parser, Debug, Clone)]
#[command(name = "sideband", version, about = "Raman sideband cooling in a 2D optical lattice")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Scenario file layered over the built-in defaults; a run manifest works too.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `run.output`).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Random seed (overrides `run.seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads, 0 for all cores (overrides `run.threads`).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Override one scenario value; repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Polarization field and diabatic surfaces over one unit cell.
    Field,
    /// Well positions, frequencies, Lamb-Dicke factors and couplings.
    Wells,
    /// Vibrational level tables and sideband resonance fields.
    Levels,
    /// Time evolution of the cooling cycle and its observables.
    Cool,
    /// Magnetic-field scan of the cooled temperature.
    Scan,
    /// Time-of-flight thermometry of the cooled cloud.
    Tof,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Field => "field",
            Command::Wells => "wells",
            Command::Levels => "levels",
            Command::Cool => "cool",
            Command::Scan => "scan",
            Command::Tof => "tof",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("fit failure (data written): {0}")]
    Fit(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Fit(_) => 4,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }
}

impl From<sideband::Error> for CliError {
    fn from(e: sideband::Error) -> Self {
        use sideband::Error as E;
        match e {
            E::Config(m) => CliError::Config(m),
            E::InvalidParameter { .. } => CliError::Config(e.to_string()),
            E::Fit { .. } | E::UnderSeparated { .. } => CliError::Fit(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

/// Result of a command after its manifest was written.
#[derive(Debug)]
pub struct Outcome {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub report: String,
    pub error: Option<CliError>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        self.error.as_ref().map_or(0, CliError::exit_code)
    }
}

/// Scenario after the config file, `--set` overrides and flags are applied.
pub fn load_scenario(cli: &Cli) -> Result<Scenario, CliError> {
    let text = match &cli.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?),
        None => None,
    };
    let mut overrides = cli.set.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("run.seed={seed}"));
    }
    if let Some(n) = cli.threads {
        overrides.push(format!("run.threads={n}"));
    }
    if let Some(out) = &cli.out {
        let quoted = toml::Value::String(out.to_string_lossy().into_owned()).to_string();
        overrides.push(format!("run.output={quoted}"));
    }
    Ok(Scenario::load(text.as_deref(), &overrides)?)
}

/// Load, resolve, write the manifest and run the command. Errors before the
/// manifest exists are returned directly; later ones travel in the outcome.
pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let scenario = load_scenario(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(scenario.run.threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        let resolved = scenario.resolve()?;
        let mut run = Run::create(cli.command.name(), &resolved, pool.current_num_threads())?;
        let result = dispatch(cli.command, &mut run, &resolved);
        Ok(run.finish(result.err()))
    })
}

fn dispatch(command: Command, run: &mut Run, r: &Resolved) -> Result<(), CliError> {
    match command {
        Command::Field => commands::field(run, r),
        Command::Wells => commands::wells(run, r),
        Command::Levels => commands::levels(run, r),
        Command::Cool => commands::cool(run, r),
        Command::Scan => commands::scan(run, r),
        Command::Tof => commands::tof(run, r),
    }
}
