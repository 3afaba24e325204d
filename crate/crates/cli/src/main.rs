//! `cdii`: generate synthetic data, reconstruct conductivities, evaluate and sweep.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<cdii::Error> for CliError {
    fn from(e: cdii::Error) -> Self {
        match e {
            cdii::Error::Numeric { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "cdii", version, about = "Conductivity imaging from one interior current density magnitude")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides, written `--key value` or `--key=value`
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Phantom, forward solve, exact and noisy data into the `data` directory
    Generate(RunArgs),
    /// Run the selected method on the data in `data`, writing into `out`
    Reconstruct(RunArgs),
    /// Relative L2 error of a grid against a reference grid
    Evaluate {
        estimate: PathBuf,
        truth: PathBuf,
        /// Restrict the error to the nodes of this mask file
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Where to write the CSV (default: eval.csv next to the estimate)
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Cartesian-product runs over config axes, summarised in table.csv
    Sweep {
        /// Axis as key=v1,v2,... (keys: n1 n2 gamma zeta delta depth width)
        #[arg(long = "axis", required = true)]
        axes: Vec<String>,
        /// Cells run concurrently
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Network-fit denoising of a grid file
    Denoise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Check the network gradient and parameter-Lipschitz bounds on random networks
    Theorycheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(a.config.as_deref(), &a.overrides),
        Command::Reconstruct(a) => commands::reconstruct(a.config.as_deref(), &a.overrides),
        Command::Evaluate {
            estimate,
            truth,
            mask,
            csv,
        } => commands::evaluate(&estimate, &truth, mask.as_deref(), csv.as_deref()),
        Command::Sweep { axes, jobs, run } => commands::sweep(run.config.as_deref(), &run.overrides, &axes, jobs),
        Command::Denoise { input, output, run } => {
            commands::denoise(&input, &output, run.config.as_deref(), &run.overrides)
        }
        Command::Theorycheck { trials, seed } => commands::theorycheck(trials, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cdii: {e}");
            ExitCode::from(e.code())
        }
    }
}
