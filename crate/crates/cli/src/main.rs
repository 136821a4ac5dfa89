//! `rposterior`: command-line driver for R^(α)-posterior experiments.
//!
//! Exit codes: 0 success, 1 I/O, parse, configuration or numerical errors,
//! 2 optimizer non-convergence, 3 a failed `are-table --check`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;

use config::Overrides;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("I/O error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("did not converge: {0}")]
    NonConvergence(String),
    #[error("check failed: {0}")]
    CheckFailed(String),
    #[error(transparent)]
    Library(rposterior::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::NonConvergence(_) => 2,
            CliError::CheckFailed(_) => 3,
            _ => 1,
        }
    }
}

impl From<rposterior::Error> for CliError {
    fn from(e: rposterior::Error) -> Self {
        use rposterior::Error as E;
        match e {
            E::Io(e) => CliError::Io(e.to_string()),
            E::Csv(e) => CliError::Parse(e.to_string()),
            e @ E::Parse { .. } => CliError::Parse(e.to_string()),
            E::NonConvergence(m) => CliError::NonConvergence(m),
            other => CliError::Library(other),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "rposterior", version, about = "Robust pseudo-Bayesian inference with R^(α)-posteriors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Minimum density power divergence fit of a CSV dataset (response first, then covariates).
    Fit {
        data: PathBuf,
        /// linear, linear-unknown-sigma or logistic.
        #[arg(long, default_value = "linear")]
        model: String,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        /// Known error scale for the linear model.
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// The CSV has no header row.
        #[arg(long)]
        no_header: bool,
    },
    /// Random-walk Metropolis chains from the R^(α)-posterior, one file per α.
    Sample {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Expected R^(α)-posterior estimates with Monte Carlo standard errors.
    Erpe {
        #[command(flatten)]
        overrides: Overrides,
        /// Use the first-order Laplace approximation instead of MCMC.
        #[arg(long)]
        laplace: bool,
    },
    /// Asymptotic relative efficiencies for the normal linear model.
    AreTable {
        /// Comma-separated α values (default: the published grid).
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        /// Compare with the published values and fail on deviations above 0.01.
        #[arg(long)]
        check: bool,
    },
    /// Influence functions, pseudo-influence surfaces and sensitivities.
    Influence {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Estimator shift under growing contamination.
    Breakdown {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Distance between the scaled posterior and its Gaussian limit over a sample-size grid.
    Bvm {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Writes the dataset a config describes (observed or simulated) as CSV.
    Simulate {
        #[command(flatten)]
        overrides: Overrides,
        /// Destination file.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit {
            data,
            model,
            alpha,
            sigma,
            no_header,
        } => commands::fit(&data, &model, alpha, sigma, !no_header),
        Command::Sample { overrides } => commands::sample(&config::ExperimentConfig::resolve(&overrides)?),
        Command::Erpe { overrides, laplace } => {
            commands::erpe(&config::ExperimentConfig::resolve(&overrides)?, laplace)
        }
        Command::AreTable { alphas, check } => commands::are_table(alphas.as_deref(), check),
        Command::Influence { overrides } => commands::influence(&config::ExperimentConfig::resolve(&overrides)?),
        Command::Breakdown { overrides } => commands::breakdown(&config::ExperimentConfig::resolve(&overrides)?),
        Command::Bvm { overrides } => commands::bvm(&config::ExperimentConfig::resolve(&overrides)?),
        Command::Simulate { overrides, out } => {
            commands::simulate(&config::ExperimentConfig::resolve(&overrides)?, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
