//! `elicit`: generate populations, fit belief models, run elicitation
//! experiments and print their reports.
//!
//! Exit status is 0 on success, 2 for usage errors (bad flags, missing input
//! files, invalid specs) and 1 for failures while running.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<elicit_core::Error> for Failure {
    fn from(e: elicit_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(name = "elicit", version, about = "Preference elicitation with population-level belief models")]
#[command(after_help = "Option precedence: command-line flag, then the --config file, then built-in defaults.")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// JSON object of option defaults, keyed by option name with underscores
    /// (for example {"seed": 7, "budget": 5}).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master seed; every command is deterministic given it. [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for batch sessions. [default: available cores]
    #[arg(long, global = true, value_name = "N")]
    pub parallel: Option<usize>,
    /// Parent directory for run directories (<timestamp>-seed<seed>). [default: runs]
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic population and write it with a manifest.
    Generate(GenerateArgs),
    /// Fit a belief model to the training part of a dataset.
    Fit(FitArgs),
    /// Run simulated (or interactive) elicitation sessions and report alignment.
    Elicit(ElicitArgs),
    /// Compare world models and selection rules across budgets.
    Ablate(AblateArgs),
    /// Measure how often the next question depends on the last answer.
    Adaptivity(AdaptivityArgs),
    /// Compare user-query cost of the belief model against a terminal-reward learner.
    ComplexityDemo(ComplexityArgs),
    /// Run the ablation, adaptivity and complexity experiments with the bundled configuration.
    ReferenceExperiment(ReferenceArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Generator spec (JSON). Its seed is overridden by --seed.
    #[arg(long, value_name = "FILE", conflicts_with = "preset")]
    pub spec: Option<PathBuf>,
    /// Built-in population: reference, separating or complexity.
    #[arg(long)]
    pub preset: Option<String>,
    /// Fraction of tasks held out for testing; 0 writes no split. [default: 0.2]
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Dataset path. [default: <run dir>/dataset.json]
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    /// gmm or blr. [default: gmm]
    #[arg(long)]
    pub model: Option<String>,
    /// GMM: number of user types. [default: 6]
    #[arg(long)]
    pub k: Option<usize>,
    /// GMM: Laplace smoothing. [default: 1]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// GMM: EM restarts. [default: 5]
    #[arg(long)]
    pub restarts: Option<usize>,
    /// BLR: prior weight standard deviation. [default: 1]
    #[arg(long)]
    pub tau: Option<f64>,
    /// BLR: observation noise standard deviation. [default: 0.5]
    #[arg(long)]
    pub sigma: Option<f64>,
    /// BLR: masked training rows per profile. [default: 20]
    #[arg(long)]
    pub masks: Option<usize>,
    /// BLR: largest masked history. [default: 8]
    #[arg(long)]
    pub max_mask: Option<usize>,
    /// Model path. [default: <run dir>/model.json]
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ElicitArgs {
    /// Model file written by `fit`.
    #[arg(long, value_name = "FILE")]
    pub model_file: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    /// random, uncertainty, uncertainty-soft, infogain, infogain-soft or static. [default: infogain]
    #[arg(long)]
    pub strategy: Option<String>,
    /// Questions per session. [default: 5]
    #[arg(long)]
    pub budget: Option<usize>,
    /// Bootstrap trials. [default: 20]
    #[arg(long)]
    pub trials: Option<usize>,
    /// Softmax temperature of the soft strategies. [default: 1]
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Answer the questions yourself on the terminal.
    #[arg(long)]
    pub interactive: bool,
    /// Task for the interactive session. [default: first test task]
    #[arg(long, requires = "interactive")]
    pub task: Option<String>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Dataset to use instead of the reference population.
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    /// Types in the full model. [default: 6]
    #[arg(long)]
    pub k: Option<usize>,
    /// [default: 20]
    #[arg(long)]
    pub trials: Option<usize>,
    /// Budgets 0..=this. [default: 8]
    #[arg(long)]
    pub max_budget: Option<usize>,
    /// Comma-separated arms: full-<strategy>, nocorr-<strategy>, population-average.
    /// [default: full-infogain,full-random,nocorr-infogain,population-average]
    #[arg(long, value_delimiter = ',')]
    pub arms: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct AdaptivityArgs {
    /// Dataset to use instead of the two-type separating population.
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    /// Model file; without it a GMM with --k types is fitted.
    #[arg(long, value_name = "FILE")]
    pub model_file: Option<PathBuf>,
    /// [default: 2]
    #[arg(long)]
    pub k: Option<usize>,
    /// [default: 5]
    #[arg(long)]
    pub budget: Option<usize>,
    /// Comma-separated strategies. [default: all six]
    #[arg(long, value_delimiter = ',')]
    pub strategies: Option<Vec<String>>,
    /// Give counterfactual branches their own randomness.
    #[arg(long)]
    pub independent_branch_seeds: bool,
}

#[derive(Debug, Args)]
pub struct ComplexityArgs {
    /// Comma-separated budgets. [default: 1,2,3]
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<usize>>,
    /// Learner episode cap per run. [default: 200000]
    #[arg(long)]
    pub max_episodes: Option<usize>,
    /// Learner runs per learning rate. [default: 5]
    #[arg(long)]
    pub learner_seeds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReferenceArgs {
    /// Bootstrap trials for the ablation. [bundled: 20]
    #[arg(long)]
    pub trials: Option<usize>,
    /// Learner episode cap per run. [bundled: 200000]
    #[arg(long)]
    pub max_episodes: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
