//! Command-line surface.
//!
//! Configuration knobs are shared across subcommands and resolve with the
//! precedence flags > config file > built-in defaults. Every run is fully
//! described by its flags and files; the environment is never consulted.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "shear",
    version,
    about = "Span-level credit assignment over rollout hidden states"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Weight a rollout corpus: per-token weights and weighted advantages.
    Weight(WeightArgs),
    /// Sample a synthetic corpus with ground-truth drift labels.
    Simulate(SimulateArgs),
    /// Run separation and concentration experiments and check their bands.
    Verify(VerifyArgs),
    /// Normalized span-pair distance heatmap for two rollouts.
    Heatmap(HeatmapArgs),
}

/// Knobs every subcommand accepts. Each one overrides the matching config
/// file field; unset values fall back to the file, then to defaults.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Configuration file (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for span-pair parallelism (default: available
    /// parallelism).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Span window length in tokens.
    #[arg(long)]
    pub window: Option<usize>,
    /// Span stride in tokens.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Entropic regularization strength.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// How covering-span distances combine into a token weight.
    #[arg(long, value_enum)]
    pub pooling: Option<PoolingFlag>,
    /// Normalization denominator for token weights.
    #[arg(long, value_enum)]
    pub normalization: Option<NormalizationFlag>,
    /// Span distance metric.
    #[arg(long, value_enum)]
    pub metric: Option<MetricFlag>,
}

#[derive(Debug, Args)]
pub struct WeightArgs {
    /// Corpus manifest path.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Hidden-state data file path.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario file path.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Check-suite file path; omit to run the built-in suite.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    /// First rollout id.
    pub rollout_a: String,
    /// Second rollout id.
    pub rollout_b: String,
    /// Corpus manifest path.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Hidden-state data file path.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolingFlag {
    Max,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormalizationFlag {
    /// Group-wide mean hidden-state norm.
    Cross,
    /// Each rollout's own mean norm.
    PerRollout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricFlag {
    /// Entropic optimal transport between span clouds.
    Sinkhorn,
    /// Cosine distance between span mean vectors.
    Cosine,
    /// Symmetric Chamfer distance.
    Chamfer,
    /// RBF-kernel maximum mean discrepancy.
    Mmd,
}
