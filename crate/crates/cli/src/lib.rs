//! The `uhddip` workbench: one binary with subcommands for dataset
//! synthesis, prior extraction, training, evaluation, inference, metrics and
//! model description.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

mod commands;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use uhddip_core::CoreError;
use uhddip_imaging::WeatherKind;

pub use commands::describe_table;

/// Environment variable overriding the default output directory.
pub const OUT_DIR_ENV: &str = "UHDDIP_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// A problem with the invocation itself, reported with exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub(crate) fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(UsageError(msg.into()).into())
}

#[derive(Debug, Parser)]
#[command(name = "uhddip", version, about = "Prior-guided restoration workbench for ultra-high-definition images")]
pub struct Cli {
    /// Worker threads for parallel stages (results never depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Increase log verbosity (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a synthetic snow or rain dataset from clean images.
    Synth(SynthArgs),
    /// Extract normal and gradient priors from images.
    Priors(PriorsArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Restore a single image.
    Infer(InferArgs),
    /// Score restored images against references.
    Metrics(MetricsArgs),
    /// Print the parameter and FLOP breakdown of a configuration.
    Describe(DescribeArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Preset name (default, desk) or path to a TOML config file.
    #[arg(long, default_value = "default")]
    pub config: String,
    /// Override a config key, e.g. `--set net.channels=8` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub kind: WeatherKind,
    #[arg(long, default_value_t = 8)]
    pub n_train: usize,
    #[arg(long, default_value_t = 2)]
    pub n_test: usize,
    /// Master seed; fixes every output byte.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory of clean images. Without it, procedural scenes are generated.
    #[arg(long)]
    pub clean: Option<PathBuf>,
    /// Side length of generated scenes.
    #[arg(long, default_value_t = 512)]
    pub scene_size: usize,
    /// Output directory (default: $UHDDIP_OUT_DIR or ./data/<kind>).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PriorsArgs {
    /// Input images.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Output directory (default: $UHDDIP_OUT_DIR or ./priors).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Gaussian smoothing before edge detection.
    #[arg(long, default_value_t = 1.4)]
    pub sigma: f64,
    /// Hysteresis low threshold as a fraction of the peak gradient.
    #[arg(long, default_value_t = 0.1)]
    pub low: f64,
    /// Hysteresis high threshold as a fraction of the peak gradient.
    #[arg(long, default_value_t = 0.2)]
    pub high: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory or manifest file.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Run directory for checkpoint, log and resolved config
    /// (default: $UHDDIP_OUT_DIR or ./runs/latest).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Test-split images scored at each log interval.
    #[arg(long, default_value_t = 0)]
    pub val_count: usize,
}

#[derive(Debug, Args)]
pub struct TilingArgs {
    /// Tile extent for full-resolution inference.
    #[arg(long, default_value_t = 512)]
    pub tile: usize,
    /// Overlap between neighbouring tiles.
    #[arg(long, default_value_t = 32)]
    pub overlap: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset split to score (train or test).
    #[arg(long, default_value = "test")]
    pub split: String,
    #[command(flatten)]
    pub tiling: TilingArgs,
    /// Write per-image metrics here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Also write restored images into this directory.
    #[arg(long)]
    pub save: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// External normal map (PNG, or .tensor/.bin with shape [H, W, 3]).
    #[arg(long)]
    pub normal_map: Option<PathBuf>,
    #[command(flatten)]
    pub tiling: TilingArgs,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Restored image or directory.
    #[arg(long)]
    pub restored: PathBuf,
    /// Reference image or directory (matched by file name).
    #[arg(long)]
    pub reference: PathBuf,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value_t = 1024)]
    pub height: usize,
    #[arg(long, default_value_t = 1024)]
    pub width: usize,
    /// Print the resolved config as TOML instead of the table.
    #[arg(long)]
    pub print_config: bool,
}

/// Maps an error to its exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || matches!(cause.downcast_ref::<CoreError>(), Some(CoreError::Config(_))) {
            return EXIT_USAGE;
        }
    }
    EXIT_RUNTIME
}

fn init_logging(cli: &Cli) {
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .format_target(false)
        .try_init();
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(&cli);
    let result = match cli.threads {
        Some(0) => Err(UsageError("--threads must be at least 1".into()).into()),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| commands::dispatch(&cli.command)),
            Err(e) => Err(anyhow::Error::new(e).context("cannot start thread pool")),
        },
        None => commands::dispatch(&cli.command),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            log::error!("{e:#}");
            exit_code(&e)
        }
    }
}
