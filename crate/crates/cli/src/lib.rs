//! Command-line pipeline: synthetic data, pattern extraction, gravity
//! fitting, training, evaluation and heatmap export.

pub mod commands;
pub mod config;
pub mod error;
pub mod heatmap;
pub mod io;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use regionshop::factorize::{GradientMode, Variant};

pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "regionshop",
    version,
    about = "Region-level shopping pattern prediction"
)]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides the config and the environment).
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Master seed; required by train and evaluate.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build pattern matrices from browsing, tower and check-in logs.
    Extract(ExtractArgs),
    /// Fit per-mode gravity laws and write interaction weights.
    FitGravity(FitGravityArgs),
    /// Train one model variant on the extracted matrices.
    Train(TrainArgs),
    /// Compare variants under repeated row holdout.
    Evaluate(EvaluateArgs),
    /// Write predicted shopping-pattern heatmaps from a trained model.
    Predict(PredictArgs),
    /// Generate a synthetic city and its event logs.
    Synth(SynthArgs),
    /// Write heatmaps for the columns of a region matrix.
    ExportHeatmap(ExportArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub browsing: Option<PathBuf>,
    #[arg(long)]
    pub towers: Option<PathBuf>,
    #[arg(long)]
    pub checkins: Option<PathBuf>,
    /// Shopping pattern count.
    #[arg(long)]
    pub n: Option<usize>,
    /// Mobility pattern count.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub nmf_iters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitGravityArgs {
    #[arg(long)]
    pub trips: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct HyperArgs {
    #[arg(long)]
    pub l: Option<usize>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// `exact` or `paper-literal`.
    #[arg(long, value_parser = parse_gradient_mode)]
    pub gradient_mode: Option<GradientMode>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// mf, cmf, cmf-n or cmf-i.
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Comma-separated variant tags.
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    pub variants: Option<Vec<Variant>>,
    /// Comma-separated training fractions.
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model document; defaults to `model.json` in the output directory.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Also write plain graymaps.
    #[arg(long)]
    pub pgm: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    /// Trips per transport mode.
    #[arg(long)]
    pub trips_per_mode: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Region matrix CSV (one row per region).
    #[arg(long)]
    pub matrix: PathBuf,
    /// Columns to export; all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub columns: Option<Vec<usize>>,
    /// File name prefix for the heatmaps.
    #[arg(long, default_value = "heatmap")]
    pub prefix: String,
    #[arg(long)]
    pub pgm: bool,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse::<Variant>().map_err(|e| e.to_string())
}

fn parse_gradient_mode(s: &str) -> Result<GradientMode, String> {
    match s {
        "exact" => Ok(GradientMode::Exact),
        "paper-literal" => Ok(GradientMode::PaperLiteral),
        other => Err(format!("unknown gradient mode `{other}` (exact | paper-literal)")),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
