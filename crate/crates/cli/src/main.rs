//! `fttm`: command-line front end for functional time-transformation models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fttm::FttmError;
use serde::Serialize;

/// Version of every JSON document the CLI writes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "fttm", version, about = "Functional time-transformation models for right-censored survival data")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "FTTM_THREADS")]
    threads: Option<usize>,
    /// JSON file with default settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Repeat for more log output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV with header `id,time,status,<scalar names...>`.
    #[arg(long)]
    pub survival: PathBuf,
    /// Wide CSV with header `id,<grid values...>`.
    #[arg(long)]
    pub functional: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Transformation basis order (single fit).
    #[arg(long)]
    pub n0: Option<usize>,
    /// Functional-coefficient basis order (single fit).
    #[arg(long)]
    pub n1: Option<usize>,
    /// Error-family parameter: r (logarithmic) or rho (Box-Cox).
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long, value_enum)]
    pub family: Option<FamilyArg>,
    /// Upper end of the time domain (default: smallest integer above the largest time).
    #[arg(long)]
    pub tau: Option<f64>,
    /// AIC grid over N0; any grid flag switches to grid search.
    #[arg(long, value_delimiter = ',')]
    pub grid_n0: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub grid_n1: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub grid_r: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum FamilyArg {
    Logarithmic,
    BoxCox,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ScenarioArg {
    A1,
    A2,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model (single spec or AIC grid) and write estimates with Wald bands.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Output directory for fit.json, beta_s.csv, h_curve.csv and aic_table.csv.
        #[arg(long)]
        out: PathBuf,
        /// Skip the observed-information step.
        #[arg(long)]
        no_inference: bool,
    },
    /// Predicted survival curves, one column per subject.
    Predict {
        /// fit.json written by `fit`.
        #[arg(long)]
        fit: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        /// Evaluation times (default: an even grid on [0, tau]).
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
        /// Points in the default time grid.
        #[arg(long, default_value_t = 101)]
        n_times: usize,
    },
    /// Nelson-Aalen curve of the pseudo residuals against the identity.
    Gof {
        #[arg(long)]
        fit: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// K-fold cross-validated Harrell C.
    Cv {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: u64,
        /// JSON output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo study on a simulation scenario.
    Simulate {
        #[arg(long, value_enum)]
        scenario: ScenarioArg,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: u64,
        /// Fixed N0 (with --n1); default is the AIC grid.
        #[arg(long, requires = "n1")]
        n0: Option<usize>,
        #[arg(long, requires = "n0")]
        n1: Option<usize>,
        /// Report JSON (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-replication CSV.
        #[arg(long)]
        replications_out: Option<PathBuf>,
        /// Directory receiving survival.csv and functional.csv of replication 0.
        #[arg(long)]
        dataset_out: Option<PathBuf>,
    },
    /// Check data files and report problems.
    Validate {
        #[command(flatten)]
        data: DataArgs,
    },
}

/// Failure reported as JSON on stdout with exit code 1.
#[derive(Debug, Serialize)]
pub struct CliError {
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            message: message.into(),
        }
    }
}

impl From<FttmError> for CliError {
    fn from(e: FttmError) -> Self {
        Self::new(e.kind(), e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new("json", e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new("io", e.to_string())
    }
}

/// Outcome of a command: the JSON printed on stdout and whether it signals failure.
pub struct Outcome {
    pub json: serde_json::Value,
    pub failed: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(outcome) => {
            println!("{}", outcome.json);
            if outcome.failed {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            let doc = serde_json::json!({
                "schema_version": SCHEMA_VERSION,
                "status": "error",
                "kind": e.kind,
                "message": e.message,
            });
            println!("{doc}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let cfg = config::ConfigFile::load(cli.config.as_deref())?;
    if let Some(t) = cli.threads.or(cfg.threads) {
        if t == 0 {
            return Err(CliError::new("usage", "--threads must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::new("threads", e.to_string()))?;
    }
    match cli.command {
        Command::Fit {
            data,
            model,
            out,
            no_inference,
        } => commands::fit(&cfg, &data, &model, &out, !no_inference),
        Command::Predict {
            fit,
            data,
            out,
            times,
            n_times,
        } => commands::predict(&fit, &data, &out, times, n_times),
        Command::Gof { fit, data, out } => commands::gof(&fit, &data, &out),
        Command::Cv {
            data,
            model,
            k,
            seed,
            out,
        } => commands::cv(&cfg, &data, &model, k, seed, out.as_deref()),
        Command::Simulate {
            scenario,
            n,
            reps,
            seed,
            n0,
            n1,
            out,
            replications_out,
            dataset_out,
        } => commands::simulate(
            &cfg,
            commands::SimulateArgs {
                scenario,
                n,
                reps,
                seed,
                fixed: n0.zip(n1),
                out,
                replications_out,
                dataset_out,
            },
        ),
        Command::Validate { data } => commands::validate(&data),
    }
}
