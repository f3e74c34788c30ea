//! Command-line driver.
//!
//! Every command that writes files also writes `run_record.json` into its
//! output directory. Exit codes: 0 success, 1 algorithmic failure (no pairs,
//! divergence, unreadable inputs), 2 usage error.

mod commands;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::synthetic::ShapeKind;

pub use commands::{
    cmd_ablate, cmd_eval, cmd_fit_ddf, cmd_match, cmd_replay, cmd_roundtrip, cmd_synth, cmd_warp,
};

pub const RUN_RECORD_FILE: &str = "run_record.json";
pub const LOSS_HISTORY_FILE: &str = "loss_history.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const WARPED_FILE: &str = "warped.raw";
pub const THREADS_ENV: &str = "ROIREG_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl fmt::Display) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.to_string(),
        }
    }

    pub fn failure(message: impl fmt::Display) -> Self {
        Self {
            code: EXIT_FAILURE,
            message: message.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) => Self::usage(e),
            _ => Self::failure(e),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Provenance of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    /// The fully resolved arguments; `roireg replay` re-runs from it.
    pub config_snapshot: serde_json::Value,
    pub timings_ms: BTreeMap<String, f64>,
    pub outputs: Vec<PathBuf>,
    pub engine_version: String,
}

pub(crate) struct Stopwatch {
    timings: BTreeMap<String, f64>,
    last: Instant,
}

impl Stopwatch {
    pub(crate) fn start() -> Self {
        Self {
            timings: BTreeMap::new(),
            last: Instant::now(),
        }
    }

    pub(crate) fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        *self.timings.entry(stage.to_string()).or_default() += (now - self.last).as_secs_f64() * 1e3;
        self.last = now;
    }
}

pub(crate) fn finish_record<A: Serialize>(
    command: &str,
    args: &A,
    watch: Stopwatch,
    out_dir: &Path,
    outputs: Vec<PathBuf>,
) -> CliResult<RunRecord> {
    let record = RunRecord {
        command: command.to_string(),
        config_snapshot: serde_json::to_value(args).expect("arguments serialize"),
        timings_ms: watch.timings,
        outputs,
        engine_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let path = out_dir.join(RUN_RECORD_FILE);
    let mut text = serde_json::to_string_pretty(&record).expect("run record serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| CliError::failure(Error::io(&path, e)))?;
    Ok(record)
}

#[derive(Debug, Parser)]
#[command(name = "roireg", version, about = "Register images through matched ROI pairs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a moving/fixed case pair with known ground truth.
    Synth(SynthArgs),
    /// Filter, embed and match the candidate ROIs of two cases.
    Match(MatchArgs),
    /// Fit a dense displacement field to a pairing.
    FitDdf(FitArgs),
    /// Resample a raw image or mask through a displacement field.
    Warp(WarpArgs),
    /// Dice and centroid TRE of a pairing, optionally after warping.
    Eval(EvalArgs),
    /// Field -> single-voxel pairs -> field reconstruction error.
    Roundtrip(RoundtripArgs),
    /// Sweep the number of pairs or the similarity threshold.
    Ablate(AblateArgs),
    /// Re-run a command from its run record.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindArg {
    Ball,
    Box,
    Ellipsoid,
}

impl From<KindArg> for ShapeKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Ball => ShapeKind::Ball,
            KindArg::Box => ShapeKind::Box,
            KindArg::Ellipsoid => ShapeKind::Ellipsoid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, clap::Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Grid extents in axis order, e.g. `64,64` or `32,32,32`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub shapes: usize,
    /// Translation along x, in voxels.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub tx: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub ty: f64,
    /// Only valid for 3D grids.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub tz: f64,
    /// In-plane rotation about the grid center, in degrees.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub rotate: f64,
    /// Standard deviation of Gaussian feature noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Feature channels; defaults to shapes + 2.
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub feature_stride: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "ball")]
    pub kinds: Vec<KindArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, clap::Args, Serialize, Deserialize)]
pub struct MatchArgs {
    #[arg(long)]
    pub moving: PathBuf,
    #[arg(long)]
    pub fixed: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 200)]
    pub min_area: usize,
    #[arg(long, default_value_t = 7000)]
    pub max_area: usize,
    #[arg(long, default_value_t = 0.8)]
    pub max_overlap: f64,
    #[arg(long, default_value_t = 0.9)]
    pub min_pred_iou: f64,
    #[arg(long, default_value_t = 0.9)]
    pub min_stability: f64,
    /// Maximize total similarity instead of greedy selection.
    #[arg(long)]
    pub optimal: bool,
    /// Minimum IoU for linking per-slice masks into volumes.
    #[arg(long, default_value_t = 0.5)]
    pub min_link_iou: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, clap::Args, Serialize, Deserialize)]
pub struct FitArgs {
    /// `pairing.json` or the directory holding it.
    #[arg(long)]
    pub pairing: PathBuf,
    /// Smoothness weight.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 300)]
    pub iters: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 0.1)]
    pub step: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, clap::Args, Serialize, Deserialize)]
pub struct WarpArgs {
    /// Directory holding `ddf.json` and `ddf.raw`.
    #[arg(long)]
    pub ddf: PathBuf,
    /// Raw grid on the field's grid: f32 values, or one byte per voxel with `--mask`.
    #[arg(long)]
    pub input: PathBuf,
    /// Treat the input as a binary mask and binarize the result.
    #[arg(long)]
    pub mask: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, clap::Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub pairing: PathBuf,
    #[arg(long)]
    pub ddf: Option<PathBuf>,
    /// Voxel spacing; defaults to the spacing stored with the pairing.
    #[arg(long, value_delimiter = ',')]
    pub spacing: Option<Vec<f64>>,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, clap::Args, Serialize, Deserialize)]
pub struct RoundtripArgs {
    #[arg(long)]
    pub ddf: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sweep {
    /// Fit with the top-k pairs for k = 1..k_max.
    K,
    /// Re-match at each threshold.
    Epsilon,
}

#[derive(Debug, Clone, PartialEq, clap::Args, Serialize, Deserialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub moving: PathBuf,
    #[arg(long)]
    pub fixed: PathBuf,
    #[arg(long, value_enum)]
    pub sweep: Sweep,
    /// Largest k; defaults to every available pair.
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.6, 0.7, 0.8, 0.9])]
    pub epsilons: Vec<f64>,
    /// Threshold for the reference pairing that every setting is scored on,
    /// and for the pairing truncated in the k sweep.
    #[arg(long, default_value_t = 0.8)]
    pub eval_epsilon: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 300)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.1)]
    pub step: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, clap::Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// A `run_record.json` written by an earlier command.
    #[arg(long)]
    pub record: PathBuf,
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // a second initialization in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn dispatch(command: &Command) -> CliResult<()> {
    match command {
        Command::Synth(a) => cmd_synth(a).map(drop),
        Command::Match(a) => cmd_match(a).map(drop),
        Command::FitDdf(a) => cmd_fit_ddf(a).map(drop),
        Command::Warp(a) => cmd_warp(a).map(drop),
        Command::Eval(a) => {
            let report = cmd_eval(a)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(())
        }
        Command::Roundtrip(a) => {
            let report = cmd_roundtrip(a)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(())
        }
        Command::Ablate(a) => cmd_ablate(a).map(drop),
        Command::Replay(a) => cmd_replay(a).map(drop),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match configure_threads().and_then(|()| dispatch(&cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
