//! Command-line surface: argument definitions and command dispatch.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod study;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Result;
use crate::simgen::Scenario;
use config::{RunConfig, Scale};

#[derive(Debug, Parser)]
#[command(name = "dmbpp", version, about = "Density regression for compositional data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a dataset from one of the simulation scenarios.
    Simulate(SimulateArgs),
    /// Run the DMBPP sampler or the parametric Dirichlet baseline.
    Fit(FitArgs),
    /// Posterior predictive density on a grid.
    Predict(PredictArgs),
    /// Distances to a true density plus LPML and -nWAIC.
    Evaluate(EvaluateArgs),
    /// Rank two fits by LPML and -nWAIC.
    Compare(CompareArgs),
    /// Replicated simulation study over scenarios, priors and sample sizes.
    ReplicateStudy(StudyArgs),
}

/// Where run settings come from: a config file, or built-in defaults at a
/// given scale.
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// TOML run configuration; every key is required.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in chain lengths when no config file is given.
    #[arg(long, value_enum, default_value_t = Scale::Desk)]
    pub scale: Scale,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        match &self.config {
            Some(path) => RunConfig::load(path),
            None => Ok(RunConfig::defaults(self.scale)),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// I, II, III or IV.
    #[arg(long)]
    pub scenario: Scenario,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Dmbpp,
    Pdr,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Data CSV with header y1..ym,x1..xp.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelKind::Dmbpp)]
    pub model: ModelKind,
    /// Named prior (prior-I or prior-II) replacing the [prior] table.
    #[arg(long)]
    pub prior: Option<String>,
    /// Replaces chain.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    /// samples.jsonl written by `fit`.
    #[arg(long)]
    pub samples: PathBuf,
    /// Covariate values (single covariate); defaults to the config grid.
    #[arg(long, value_delimiter = ',')]
    pub x: Vec<f64>,
    /// CSV of covariate rows with header x1..xp.
    #[arg(long, conflicts_with = "x")]
    pub x_grid: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub samples: PathBuf,
    /// Log-likelihood matrix; defaults to loglik.csv next to the samples.
    #[arg(long)]
    pub loglik: Option<PathBuf>,
    /// Compare against this scenario's true density.
    #[arg(long, required_unless_present = "truth_grid", conflicts_with = "truth_grid")]
    pub scenario: Option<Scenario>,
    /// Compare against a density-grid CSV on the configured response grid.
    #[arg(long)]
    pub truth_grid: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Fit directory or loglik CSV.
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Display names for the two fits.
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
    /// Also write comparison.csv and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct StudyArgs {
    /// desk: 10 replicates at n = 250; full: 100 replicates at n = 250, 500, 1000.
    #[arg(long, value_enum, default_value_t = Scale::Desk)]
    pub scale: Scale,
    /// Chain and grid settings; replaces the scale's built-in chain.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Sample sizes.
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub scenarios: Vec<Scenario>,
    /// prior-I, prior-II, or `config` for the config file's [prior] table.
    #[arg(long, value_delimiter = ',')]
    pub priors: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs a parsed command and returns the text to print.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Simulate(args) => commands::simulate(&args),
        Command::Fit(args) => commands::fit(&args),
        Command::Predict(args) => commands::predict(&args),
        Command::Evaluate(args) => commands::evaluate(&args),
        Command::Compare(args) => commands::compare(&args),
        Command::ReplicateStudy(args) => commands::replicate_study(&args),
    }
}
