//! `wifiloc`: ingest fingerprint data, train and evaluate the ensemble
//! localizer, generate synthetic floors and run the HTTP service.

mod commands;
mod output;

use std::fmt;
use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wifiloc_core::ErrorClass;
use wifiloc_service::ServiceError;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(name = "wifiloc", version, about = "Wi-Fi fingerprint indoor localization")]
pub struct Cli {
    /// Worker threads for training and evaluation (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Parent directory for timestamped report directories.
    #[arg(long, global = true, default_value = "reports", value_name = "DIR")]
    reports: PathBuf,
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize raw scans into a fingerprint store.
    Ingest(IngestArgs),
    /// Train both band models and save the bundle.
    Train(TrainArgs),
    /// Repeated train/validation/test evaluation.
    Evaluate(EvaluateArgs),
    /// Accuracy as access points are removed, most redundant first.
    Ablate(AblateArgs),
    /// Accuracy on random stratified subsets of the fingerprints.
    Subsample(SubsampleArgs),
    /// Generate a synthetic fingerprint store.
    Synth(SynthArgs),
    /// Localize one scan with a trained bundle.
    Predict(PredictArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    Jsonl,
    Csv,
    Find3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BandSelector {
    Dual,
    #[value(name = "2.4")]
    Only24,
    Both,
}

impl BandSelector {
    pub fn name(self) -> &'static str {
        match self {
            BandSelector::Dual => "dual",
            BandSelector::Only24 => "2.4",
            BandSelector::Both => "both",
        }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Raw scan file.
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "jsonl")]
    format: InputFormat,
    /// Radio registry CSV (`mac,band[,ap]`).
    #[arg(long, value_name = "PATH")]
    registry: PathBuf,
    /// Store directory to write.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

/// Options shared by every command that trains models.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Fingerprint store directory.
    #[arg(long, value_name = "DIR")]
    store: PathBuf,
    /// Base seed for splits and model fitting.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Ensemble configuration TOML (missing keys take defaults).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Cheaper classifier settings, for quick looks.
    #[arg(long, conflicts_with = "config")]
    fast: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Also copy the bundle here.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value = "both")]
    band: BandSelector,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// AP counts to keep, e.g. 15,14,13 (default: all down to all-5).
    #[arg(long, value_delimiter = ',', value_name = "N,..")]
    ap_counts: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    /// RSSI at or above which an AP counts as heard, dBm.
    #[arg(long, default_value_t = wifiloc_core::fingerprint::DEFAULT_VISIBILITY_DBM, allow_negative_numbers = true)]
    visibility: f64,
}

#[derive(Debug, Args)]
pub struct SubsampleArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Fractions of fingerprints to keep, each in (0, 1].
    #[arg(long, value_delimiter = ',', default_value = "1.0,0.8,0.6,0.4,0.2", value_name = "F,..")]
    fractions: Vec<f64>,
    #[arg(long, value_enum, default_value = "dual")]
    band: BandSelector,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of location cells, laid out on a near-square grid.
    #[arg(long, default_value_t = 16)]
    cells: usize,
    /// Number of access points.
    #[arg(long, default_value_t = 15)]
    aps: usize,
    /// Shadowing standard deviation, dB.
    #[arg(long, default_value_t = 6.0)]
    sigma: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Scans per cell.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Cell side, metres.
    #[arg(long, default_value_t = 6.0)]
    cell_size: f64,
    /// Distance between cell centres, metres.
    #[arg(long, default_value_t = 12.0)]
    spacing: f64,
    /// Only 2.4 GHz radios.
    #[arg(long)]
    single_band: bool,
    /// Store directory to write.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Bundle written by `train`.
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    /// Scan JSON file; `-` or absent reads standard input.
    input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Service TOML; WIFILOC_* environment variables override it.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(wifiloc_core::Error),
    Service(ServiceError),
    Io(io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => class_code(e.class()),
            CliError::Service(ServiceError::Core(e)) => class_code(e.class()),
            CliError::Service(ServiceError::Config(_)) => 2,
            CliError::Service(ServiceError::Corrupt(_)) => 3,
            CliError::Service(_) | CliError::Io(_) => 5,
        }
    }
}

fn class_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Data => 3,
        ErrorClass::Training => 4,
        ErrorClass::Io => 5,
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Service(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<wifiloc_core::Error> for CliError {
    fn from(e: wifiloc_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        CliError::Service(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .init();
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let reports = cli.reports;
    match cli.command {
        Command::Ingest(a) => commands::ingest(&a, &reports),
        Command::Train(a) => commands::train(&a, &reports),
        Command::Evaluate(a) => commands::evaluate(&a, &reports),
        Command::Ablate(a) => commands::ablate(&a, &reports),
        Command::Subsample(a) => commands::subsample(&a, &reports),
        Command::Synth(a) => commands::synth(&a, &reports),
        Command::Predict(a) => commands::predict(&a),
        Command::Serve(a) => commands::serve(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
