//! `patternnet` command line: dataset generation, training, evaluation,
//! robustness sweeps and inspection of partitions, neighbor graphs and
//! parameter counts.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use patternnet::neighbors::{KnnMethod, Metric};
use patternnet::patternnet::Task;
use patternnet::Error;

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "patternnet", version, about = "Point-cloud learning with cloning decomposition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a four-class synthetic shape dataset with train/test manifests.
    GenData(GenDataArgs),
    /// Train a network and write a checkpoint plus metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Accuracy and subset consistency across noise levels (CSV).
    Robustness(RobustnessArgs),
    /// Cloning partition of one cloud (CSV plus JSON entropies).
    Partition(PartitionArgs),
    /// K-nearest-neighbor graph of one cloud (CSV).
    Knn(KnnArgs),
    /// Trainable parameter breakdown.
    Params(ParamsArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub per_class: usize,
    #[arg(long, default_value_t = 1024)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Overrides applied on top of a config file.
#[derive(Debug, Args, Default)]
pub struct ModelOverrides {
    /// TOML run configuration; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub neighbors: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub parts: Option<usize>,
    #[arg(long, value_parser = parse_task)]
    pub task: Option<Task>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelOverrides,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    /// Seed of evaluation partitions and noise; defaults to the training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RobustnessArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long = "sigma", value_delimiter = ',', default_values_t = [0.0, 0.02, 0.05, 0.1, 0.15])]
    pub sigmas: Vec<f64>,
    /// Inference-time neighbor counts for an extra K sweep (weights do not
    /// depend on K, so no retraining happens).
    #[arg(long = "neighbors", value_delimiter = ',')]
    pub neighbors: Vec<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub k_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub levels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = patternnet::cloning::DEFAULT_TOL_NATS)]
    pub tol: f64,
    #[arg(long, default_value_t = patternnet::cloning::DEFAULT_MAX_RETRIES)]
    pub max_retries: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Entropy summary; defaults to the CSV path with a `.json` extension.
    #[arg(long)]
    pub entropies_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KnnArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub neighbors: usize,
    #[arg(long, default_value = "hilbert", value_parser = parse_metric)]
    pub metric: Metric,
    #[arg(long, default_value = "brute", value_parser = parse_method)]
    pub method: KnnMethod,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[command(flatten)]
    pub model: ModelOverrides,
    /// Exit with the data-error code when the total exceeds this.
    #[arg(long)]
    pub budget: Option<usize>,
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_task(s: &str) -> Result<Task, String> {
    match s {
        "classification" => Ok(Task::Classification),
        "segmentation" => Ok(Task::Segmentation),
        _ => Err(format!("unknown task '{s}'")),
    }
}

fn parse_method(s: &str) -> Result<KnnMethod, String> {
    match s {
        "brute" => Ok(KnnMethod::BruteForce),
        "kdtree" => Ok(KnnMethod::KdTree),
        _ => Err(format!("unknown method '{s}' (brute, kdtree)")),
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parameter(_) => EXIT_USAGE,
        Error::Numeric(_)
        | Error::Gradient(_)
        | Error::Diverged { .. }
        | Error::DegenerateEntropy
        | Error::DegenerateBatch => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Parses and runs; returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
