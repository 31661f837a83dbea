use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pnal::noise::NoiseKind;
use pnal::trainer::{ClusterSource, Pipeline, Warmup};

mod commands;
mod config;
mod dataset;

use config::{parse_name, parse_pairs};

/// Error classes that decide the exit code.
#[derive(Debug)]
pub enum Failure {
    Invalid(String),
    Io(std::io::Error),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Invalid(msg) => f.write_str(msg),
            Failure::Io(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for Failure {}

/// Sorts a library error into validation or I/O.
pub fn core_failure(e: pnal::Error) -> Failure {
    match e {
        pnal::Error::Io(io) => Failure::Io(io),
        other => Failure::Invalid(other.to_string()),
    }
}

pub const EXIT_INVALID: u8 = 1;
pub const EXIT_IO: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "pnal", version, about = "Noisy-label cleaning for point cloud segmentation")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "PNAL_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Corrupt the labels of a dataset.
    Inject(InjectArgs),
    /// Cluster every scene of a dataset with DBSCAN.
    Cluster(ClusterArgs),
    /// Train on a noisy dataset and export cleaned labels.
    Train(TrainArgs),
    /// Compare a prediction file with a ground-truth file.
    Eval(EvalArgs),
    /// Summarize a dataset.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory. Relative paths resolve against PNAL_OUTPUT_ROOT when set.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    instances_per_class: Option<usize>,
    #[arg(long)]
    points_per_instance: Option<usize>,
    #[arg(long)]
    color_noise: Option<f64>,
    #[arg(long)]
    instance_color_jitter: Option<f64>,
    /// Keep objects apart from their floor tiles.
    #[arg(long)]
    no_contact: bool,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    #[command(flatten)]
    common: Common,
    /// Clean dataset directory.
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, value_parser = parse_name::<NoiseKind>)]
    kind: Option<NoiseKind>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    tau_pair: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Confusable class pairs, e.g. `0:1,2:3`.
    #[arg(long, value_parser = parse_pairs)]
    pairs: Option<Vec<(u32, u32)>>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    min_pts: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Noisy training dataset directory.
    #[arg(long, short)]
    input: PathBuf,
    /// Clean reference of the training set, for correction statistics.
    #[arg(long)]
    clean: Option<PathBuf>,
    /// Clean test dataset for the final report.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    pipeline: Option<Pipeline>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Warm-up epochs or `auto`.
    #[arg(long)]
    warmup: Option<Warmup>,
    #[arg(long)]
    boundary_epochs: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    k_boundary: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    min_pts: Option<usize>,
    #[arg(long, value_parser = parse_name::<ClusterSource>)]
    clusters: Option<ClusterSource>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    points_per_block: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Keep the first extracted boundary band for all boundary epochs.
    #[arg(long)]
    frozen_band: bool,
    /// Write the boundary band of every cleaning epoch under `bands/`.
    #[arg(long)]
    dump_band: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Scene file whose label column holds predictions.
    #[arg(long)]
    pred: PathBuf,
    /// Scene file with ground-truth labels; points must align line by line.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    classes: Option<usize>,
    /// Neighbourhood size of the edge band.
    #[arg(long, default_value_t = pnal::boundary::DEFAULT_BOUNDARY_K)]
    k_boundary: usize,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long, short)]
    input: PathBuf,
    /// Clean reference to score the labels (and masks) against.
    #[arg(long)]
    clean: Option<PathBuf>,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Failure::Invalid("--workers must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Invalid(e.to_string()))?;
    }
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Inject(a) => commands::inject(a),
        Command::Cluster(a) => commands::cluster(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Stats(a) => commands::stats(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return match f {
                Failure::Invalid(_) => EXIT_INVALID,
                Failure::Io(_) => EXIT_IO,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
        if let Some(e) = cause.downcast_ref::<pnal::Error>() {
            return if e.is_io() { EXIT_IO } else { EXIT_INVALID };
        }
    }
    EXIT_INVALID
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_INVALID) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
