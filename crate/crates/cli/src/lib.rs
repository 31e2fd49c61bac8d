//! `trailcam` command-line pipeline.
//!
//! Exit codes: 0 success, 1 invalid input or usage, 2 I/O failure,
//! 3 `drift-check` decided retraining is needed.

mod commands;
pub mod config;
mod context;

use std::ffi::OsString;
use std::path::PathBuf;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

pub use config::PipelineConfig;
pub use context::Context;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_RETRAIN: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] trailcam_core::Error),

    #[error("{0}")]
    Usage(String),

    #[error("config {path}: {message}")]
    Config { path: String, message: String },

    #[error("trainer `{command}` failed: {message}")]
    Trainer { command: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_io() => EXIT_IO,
            CliError::Trainer { .. } => EXIT_IO,
            _ => EXIT_INVALID,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "trailcam",
    version,
    about = "Trail-camera curation, drift checks and classifier experiments"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Pipeline configuration (TOML)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Restrict to one site
    #[arg(long, global = true)]
    pub site: Option<String>,

    /// Restrict to one local calendar day (YYYY-MM-DD)
    #[arg(long, global = true)]
    pub date: Option<NaiveDate>,

    /// Retraining threshold on the RTI
    #[arg(long, global = true)]
    pub threshold: Option<f64>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for per-image work
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// `day=<binding>` or `night=<binding>`; a binding is `oracle`,
    /// `baseline` or a predictor command line
    #[arg(long, global = true, value_name = "ROUTE=BINDING")]
    pub predictor: Vec<String>,

    /// Hypothesized success rate for the experiment t-tests
    #[arg(long, global = true)]
    pub mu0: Option<f64>,

    /// Recompute statistics from a counts file instead of images
    #[arg(long, global = true)]
    pub replay: Option<PathBuf>,

    /// Output directory for reports
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ManifestArgs {
    /// Annotation manifest CSV
    pub manifest: PathBuf,

    /// Image directory (default: config `images`, else `images/` beside the manifest)
    #[arg(long)]
    pub images: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic multi-site dataset with a matching config
    Synth(commands::data::SynthArgs),
    /// Validate a manifest and summarize it
    Ingest { manifest: PathBuf },
    /// Crop day frames to the fountain window and report box retention
    Crop(ManifestArgs),
    /// Build daily background means and register them as states
    Mean {
        #[command(flatten)]
        input: ManifestArgs,
        /// Compute without writing to the state store
        #[arg(long)]
        no_register: bool,
    },
    /// Build balanced, time-stratified training manifests
    Sample(ManifestArgs),
    /// Compare each day's mean against the site's background states
    DriftCheck {
        #[command(flatten)]
        input: ManifestArgs,
        /// Leave triggering days out of the state store
        #[arg(long)]
        no_register: bool,
        /// Retraining subset size (default: min(200, images that day))
        #[arg(long)]
        quota: Option<usize>,
    },
    /// Pairwise RTI between stored background states
    RtiMatrix,
    /// Route frames through the day and night predictors
    Predict(ManifestArgs),
    /// Confusion counts per site from predictions and ground truth
    EvalClassify {
        manifest: Option<PathBuf>,
        predictions: Option<PathBuf>,
    },
    /// Detection metrics from scored boxes and ground truth
    EvalDetect {
        manifest: Option<PathBuf>,
        detections: Option<PathBuf>,
        #[arg(long, default_value_t = trailcam_core::evaluation::DEFAULT_IOU_THRESHOLD)]
        iou: f64,
    },
    /// Most similar empty frame for one animal frame
    Twin {
        #[command(flatten)]
        input: ManifestArgs,
        #[arg(long)]
        image: String,
    },
    /// Twin-image (animal removal) experiment
    TpExp {
        manifest: Option<PathBuf>,
        #[arg(long)]
        images: Option<PathBuf>,
    },
    /// Template-insertion experiment
    TnExp {
        manifest: Option<PathBuf>,
        #[arg(long)]
        images: Option<PathBuf>,
        /// Directory of template PNGs (default: config `templates`, else `templates/` beside the manifest)
        #[arg(long)]
        templates: Option<PathBuf>,
    },
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> CliResult<i32> {
    let ctx = Context::from_args(&cli.global)?;
    let jobs = cli.global.jobs.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("--jobs: {e}")))?;
    pool.install(|| commands::dispatch(&ctx, cli.command))
}
