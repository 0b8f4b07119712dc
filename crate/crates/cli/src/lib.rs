//! Command-line front end for calibration, matching, evaluation, pooling and
//! synthetic data generation.

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;

/// Exit status for success.
pub const EXIT_OK: i32 = 0;
/// Exit status for bad invocations (flags, config values).
pub const EXIT_USAGE: i32 = 1;
/// Exit status for bad or missing data.
pub const EXIT_DATA: i32 = 2;

/// Marks an error as a usage problem rather than a data problem.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.chain().any(|e| e.is::<UsageError>()) {
        EXIT_USAGE
    } else if let Some(mapfilter::Error::Config(_)) = err.downcast_ref::<mapfilter::Error>() {
        EXIT_USAGE
    } else {
        EXIT_DATA
    }
}

#[derive(Debug, Parser)]
#[command(name = "mapfilter", version, about = "Feature-map filtering for CNN place recognition")]
pub struct Cli {
    /// TOML file with default flag values; flags on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Greedily filter feature maps using calibration triplets.
    Calibrate(CalibrateArgs),
    /// Match query images against the reference traverse.
    Match(MatchArgs),
    /// Precision/recall sweep over a match table.
    Eval(EvalArgs),
    /// Generate a synthetic dataset with planted signal channels.
    Synth(SynthArgs),
    /// Print the pyramid-pooled descriptor of one tensor file.
    Pool(PoolArgs),
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Reference traverse manifest.
    #[arg(long)]
    pub reference: PathBuf,
    /// Calibration traverse manifest (query condition).
    #[arg(long)]
    pub calibration: PathBuf,
    /// `query_id,reference_index` table for the calibration images. Defaults
    /// to frame alignment (frame mode) or nearest position (metric mode).
    #[arg(long)]
    pub correspondences: Option<PathBuf>,
    /// Evaluation query manifest, only used to warn when it overlaps the
    /// calibration images.
    #[arg(long)]
    pub query: Option<PathBuf>,
    /// Gradient cut-off [default: 0.1].
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Number of calibration images [default: 50].
    #[arg(long)]
    pub num_calib: Option<usize>,
    /// Seed for negative sampling [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Frames around the true match never used as negatives [default: 20].
    #[arg(long)]
    pub exclusion_radius: Option<usize>,
    /// Output filter document.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub query: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    /// Filter document produced by `calibrate`.
    #[arg(long, required_unless_present = "no_filter", conflicts_with = "no_filter")]
    pub filter: Option<PathBuf>,
    /// Use every channel.
    #[arg(long)]
    pub no_filter: bool,
    /// Half-width of the runner-up exclusion window [default: 10].
    #[arg(long)]
    pub window: Option<usize>,
    /// Output match table (CSV).
    #[arg(long)]
    pub out: PathBuf,
    /// Timing report path [default: <out>.timing.json].
    #[arg(long)]
    pub timing: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Match table to evaluate.
    #[arg(long)]
    pub table: PathBuf,
    /// Second table (e.g. unfiltered) evaluated against the same truth.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long)]
    pub query: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    /// `query_id,reference_index` table for frame-mode truth.
    #[arg(long)]
    pub correspondences: Option<PathBuf>,
    /// frame or metric [default: the query manifest's mode].
    #[arg(long)]
    pub gt_mode: Option<String>,
    /// Frames or meters [default: 10 frames / 30 m].
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Number of quality thresholds in the sweep [default: 100].
    #[arg(long)]
    pub steps: Option<usize>,
    /// Output directory for PR curves and summaries.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub places: Option<usize>,
    #[arg(long)]
    pub calib: Option<usize>,
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    /// Number of planted signal channels.
    #[arg(long)]
    pub signal: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
    #[arg(long)]
    pub shift: Option<f64>,
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PoolArgs {
    /// FMAP tensor file.
    pub tensor: PathBuf,
    /// Comma-separated channel indices; prints the flattened vector.
    #[arg(long, value_delimiter = ',')]
    pub kept: Option<Vec<usize>>,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let file = config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Calibrate(a) => commands::calibrate(a, &file.calibrate),
        Command::Match(a) => commands::match_queries(a, &file.matching),
        Command::Eval(a) => commands::eval(a, &file.eval),
        Command::Synth(a) => commands::synth(a, &file.synth),
        Command::Pool(a) => commands::pool(a),
    }
}
