use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flipset_core::flipset::Mode;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "flipset", version, about = "Find the fewest training labels to flip a prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic train/test pair as CSV.
    Synth(SynthArgs),
    /// Fit an L2-regularized logistic regression model.
    Train(TrainArgs),
    /// Compute flip sets for test points.
    Flipset(FlipsetArgs),
    /// Check saved flip sets by retraining.
    Verify(VerifyArgs),
    /// Run a named study and write its report directory.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Training data: CSV with a header, or `label idx:value ...` lines with --sparse.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub format: FormatArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FormatArgs {
    /// Label column name (CSV input).
    #[arg(long, default_value = "label")]
    pub label: String,
    /// Column holding group tags (CSV input).
    #[arg(long)]
    pub tag_column: Option<String>,
    /// Read sparse `label idx:value` lines instead of CSV.
    #[arg(long)]
    pub sparse: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolverArgs {
    /// L2 penalty; must be positive.
    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,
    /// Gradient-norm stopping tolerance.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// Drop the constant column.
    #[arg(long)]
    pub no_intercept: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n_train: usize,
    #[arg(long, default_value_t = 200)]
    pub n_test: usize,
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    #[arg(long, default_value_t = 2.0)]
    pub separation: f64,
    /// Share of rows tagged X; adds a tag column and a `tag_x` feature.
    #[arg(long)]
    pub tag_share: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Decision threshold stored with the model.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Model JSON path; the resolved config is written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Relabel,
    Remove,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Relabel => Mode::Relabel,
            ModeArg::Remove => Mode::Remove,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct FlipsetArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Test points, in the same format as --data.
    #[arg(long)]
    pub test: PathBuf,
    /// Only this test row (0-based).
    #[arg(long)]
    pub test_index: Option<usize>,
    /// Classification threshold; defaults to the one stored in the model.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, value_enum, default_value_t = ModeArg::Relabel)]
    pub mode: ModeArg,
    /// Retrain to check every found set.
    #[arg(long)]
    pub verify: bool,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub test: PathBuf,
    /// `flipsets.json` written by the flipset command.
    #[arg(long)]
    pub flipsets: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ExperimentArgs {
    /// noise-sweep, k-vs-prob, method-comparison, bias-study, relabel-vs-remove or k-histogram.
    pub name: String,
    /// Training data; a synthetic instance is generated when absent.
    #[arg(long, requires = "test")]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    pub format: FormatArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,

    /// Noise ratios for noise-sweep.
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
    /// Noise ratio for relabel-vs-remove.
    #[arg(long, default_value_t = 0.3)]
    pub noise_ratio: f64,
    /// Test points examined by method-comparison and relabel-vs-remove.
    #[arg(long, default_value_t = 100)]
    pub sample_size: usize,
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Option<Vec<usize>>,
    /// Score methods for method-comparison, e.g. ip-relabel,random.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long, default_value = "X")]
    pub target_tag: String,
    #[arg(long, default_value_t = 1)]
    pub eligible_label: u8,
    #[arg(long, default_value_t = 0.9)]
    pub flip_fraction: f64,

    /// Synthetic instance size and shape, used without --data.
    #[arg(long, default_value_t = 1000)]
    pub n_train: usize,
    #[arg(long, default_value_t = 200)]
    pub n_test: usize,
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    #[arg(long, default_value_t = 2.0)]
    pub separation: f64,
    /// Tag share of the synthetic instance for bias-study.
    #[arg(long, default_value_t = 0.4)]
    pub tag_share: f64,
}
