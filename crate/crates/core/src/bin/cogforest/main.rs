//! `cogforest`: forest building, sampling weights, noise selection and toy
//! training from the command line.
//!
//! Exit codes: 0 success, 2 usage or input error, 1 internal error.
//! `COGFOREST_THREADS` caps the worker pool used by parallel stages.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "cogforest", version, about = "Coarse-grained leading forests and environment sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build one forest per class and write them as JSON.
    Build(BuildArgs),
    /// Emit sampling weights for forests.
    Weights(WeightsArgs),
    /// Flag likely label noise in forests.
    Noise(NoiseArgs),
    /// Train the toy linear model with environment sampling.
    Train(Box<TrainArgs>),
    /// Write the seeded synthetic two-attribute dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LeaderArg {
    Density,
    Node,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct BuildArgs {
    /// Feature file (.csv, or .cgf binary).
    features: std::path::PathBuf,
    #[arg(long, default_value_t = 3.0)]
    d_rd: f64,
    #[arg(long, default_value_t = 1.0)]
    d_rn: f64,
    /// Read --d-rd and --d-rn as multiples of the base distance.
    #[arg(long)]
    base_multiples: bool,
    #[arg(long, default_value = "euclidean")]
    metric: String,
    #[arg(long, value_enum, default_value_t = LeaderArg::Density)]
    leader_radius: LeaderArg,
    #[arg(long, default_value = ".")]
    out_dir: std::path::PathBuf,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct WeightsArgs {
    /// Forest JSON files, one per class.
    #[arg(required = true)]
    forests: Vec<std::path::PathBuf>,
    #[arg(long)]
    q_attr: f64,
    /// Class-level factor; emits global environment weights over all forests.
    #[arg(long)]
    q_cls: Option<f64>,
    /// Feature file whose ids and labels the forests must match.
    #[arg(long)]
    features: Option<std::path::PathBuf>,
    /// Noise CSV whose ids get zero weight.
    #[arg(long)]
    exclude: Option<std::path::PathBuf>,
    /// Emit pre-normalization weights (single forest only).
    #[arg(long)]
    raw: bool,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<std::path::PathBuf>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct NoiseArgs {
    #[arg(required = true)]
    forests: Vec<std::path::PathBuf>,
    #[arg(long)]
    features: std::path::PathBuf,
    #[arg(long, default_value_t = 3)]
    n_min: usize,
    #[arg(long, default_value_t = 2)]
    n_d: usize,
    #[arg(long, default_value_t = 1)]
    n_l: usize,
    #[arg(long, default_value_t = 0.1)]
    p_d: f64,
    #[arg(long)]
    out: Option<std::path::PathBuf>,
}

/// Every option falls back to the config file, then to the built-in default.
#[derive(Debug, Args, Default)]
#[command(allow_negative_numbers = true)]
struct TrainArgs {
    features: std::path::PathBuf,
    /// Flat `key = value` file; keys are the long flag names with underscores.
    #[arg(long)]
    config: Option<std::path::PathBuf>,
    /// Select noise after every rebuild and exclude it from sampling.
    #[arg(long)]
    plus: bool,
    /// Attribute-balanced evaluation split.
    #[arg(long)]
    heldout: Option<std::path::PathBuf>,
    #[arg(long, default_value = ".")]
    out_dir: std::path::PathBuf,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    refresh_period: Option<usize>,
    /// Environments as `q_cls,q_attr` pairs separated by `;`.
    #[arg(long)]
    envs: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// `mcl` or `mctl`; defaults to `mctl` with --plus.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    d_rd: Option<f64>,
    #[arg(long)]
    d_rn: Option<f64>,
    /// Read --d-rd and --d-rn as metric units instead of base multiples.
    #[arg(long)]
    absolute_radii: bool,
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    leader_radius: Option<String>,
    #[arg(long)]
    n_min: Option<usize>,
    #[arg(long)]
    n_d: Option<usize>,
    #[arg(long)]
    n_l: Option<usize>,
    #[arg(long)]
    p_d: Option<f64>,
    /// Output width of the linear extractor; input width when omitted.
    #[arg(long)]
    feature_dim: Option<usize>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Clean samples per class as `a,b`.
    #[arg(long, default_value = "300,100")]
    class_sizes: String,
    #[arg(long, default_value_t = 0.1)]
    minority_fraction: f64,
    #[arg(long, default_value_t = 0.6)]
    spread: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_fraction: f64,
    #[arg(long, default_value_t = 100)]
    heldout_per_cell: usize,
    #[arg(long)]
    out: std::path::PathBuf,
    #[arg(long)]
    heldout_out: std::path::PathBuf,
}

/// Failure with its process exit code.
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

    // a closed downstream pipe (e.g. `| head`) ends the run quietly
    fn broken_pipe() -> Self {
        Self {
            code: 0,
            message: String::new(),
        }
    }
}

impl From<cogforest::Error> for CliError {
    fn from(e: cogforest::Error) -> Self {
        if let cogforest::Error::Io(io) = &e {
            if io.kind() == std::io::ErrorKind::BrokenPipe {
                return Self::broken_pipe();
            }
        }
        Self {
            code: if e.is_input_error() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            return Self::broken_pipe();
        }
        Self {
            code: 1,
            message: format!("I/O error: {e}"),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("COGFOREST_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage(format!("COGFOREST_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError {
            code: 1,
            message: format!("cannot configure thread pool: {e}"),
        })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Build(a) => commands::build(a),
        Command::Weights(a) => commands::weights(a),
        Command::Noise(a) => commands::noise(a),
        Command::Train(a) => commands::train(*a),
        Command::Synth(a) => commands::synth(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.code == 0 => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
