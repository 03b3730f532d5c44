mod gradcheck;
mod run;
mod sweep;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Federated learning experiments: FedDC, FedAvg, FedProx, Scaffold, FedDyn.
#[derive(Parser)]
#[command(name = "feddrift", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write records.csv, summary.json and config.json.
    Run(run::RunArgs),
    /// Run a grid of algorithms x settings x seeds and tabulate results.
    Sweep(sweep::SweepArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(gradcheck::GradcheckArgs),
}

/// Failure classes with their exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or manifest (exit 2).
    Config(String),
    /// Failure while running (exit 1).
    Runtime(feddrift::Error),
    /// A check ran and did not pass (exit 1).
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) | CliError::Failed(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Runtime(e) => write!(f, "{e}"),
            CliError::Failed(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<feddrift::Error> for CliError {
    fn from(e: feddrift::Error) -> Self {
        CliError::Runtime(e)
    }
}

/// Reads a JSON document into `T`, reporting the path of the offending
/// field on schema errors.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        CliError::Config(format!("{}: at `{at}`: {}", path.display(), e.into_inner()))
    })
}

pub fn default_output_dir(setting: &str, label: &str, seed: u64) -> PathBuf {
    PathBuf::from("out").join(format!("{setting}-{label}-s{seed}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run::run(args),
        Command::Sweep(args) => sweep::sweep(args),
        Command::Gradcheck(args) => gradcheck::gradcheck(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
