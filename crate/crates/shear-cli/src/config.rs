//! Configuration resolution: flags > config file > built-in defaults.
//!
//! The resolved [`EffectiveConfig`] is the complete description of a run
//! apart from its input files; it is what the run manifest snapshots, and
//! feeding it back through the same command reproduces the outputs.

use std::fs;
use std::num::NonZeroUsize;
use std::path::Path;

use shear::model::SpanConfig;
use shear::transport::{DistanceMetric, SinkhornConfig};
use shear::weighting::{NormalizationMode, PoolingMode, WeightingConfig};
use shear::{Result, ShearError};

use crate::args::{ConfigArgs, MetricFlag, NormalizationFlag, PoolingFlag};

/// Optional overrides read from `--config`. Field names mirror the flags;
/// enums use their serialized names (e.g. `cross_rollout`, `cosine_mean`).
/// Unknown fields are rejected so typos fail loudly instead of silently
/// running with defaults.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub window: Option<usize>,
    pub stride: Option<usize>,
    pub epsilon: Option<f64>,
    pub max_iterations: Option<usize>,
    pub marginal_tolerance: Option<f64>,
    pub pooling: Option<PoolingMode>,
    pub normalization: Option<NormalizationMode>,
    pub metric: Option<DistanceMetric>,
    pub advantage_epsilon: Option<f64>,
    pub mmd_bandwidth: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ShearError::io(path.display().to_string(), e))?;
        serde_json::from_str(&text)
            .map_err(|e| ShearError::Config(format!("config file {}: {e}", path.display())))
    }
}

/// The fully resolved configuration a run executes under.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EffectiveConfig {
    pub weighting: WeightingConfig,
    pub seed: u64,
    pub workers: usize,
}

impl EffectiveConfig {
    /// Resolves flags against an optional config file and the defaults,
    /// then validates the result.
    pub fn resolve(args: &ConfigArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let defaults = WeightingConfig::default();
        let span_cfg = SpanConfig::new(
            args.window.or(file.window).unwrap_or(defaults.span_cfg.window),
            args.stride.or(file.stride).unwrap_or(defaults.span_cfg.stride),
        )?;
        let sinkhorn_cfg = SinkhornConfig {
            epsilon: args
                .epsilon
                .or(file.epsilon)
                .unwrap_or(defaults.sinkhorn_cfg.epsilon),
            max_iterations: file
                .max_iterations
                .unwrap_or(defaults.sinkhorn_cfg.max_iterations),
            marginal_tolerance: file
                .marginal_tolerance
                .unwrap_or(defaults.sinkhorn_cfg.marginal_tolerance),
        };
        let weighting = WeightingConfig {
            span_cfg,
            sinkhorn_cfg,
            pooling: args
                .pooling
                .map(PoolingFlag::into)
                .or(file.pooling)
                .unwrap_or(defaults.pooling),
            normalization: args
                .normalization
                .map(NormalizationFlag::into)
                .or(file.normalization)
                .unwrap_or(defaults.normalization),
            metric: args
                .metric
                .map(MetricFlag::into)
                .or(file.metric)
                .unwrap_or(defaults.metric),
            advantage_epsilon: file.advantage_epsilon.unwrap_or(defaults.advantage_epsilon),
            mmd_bandwidth: file.mmd_bandwidth.or(defaults.mmd_bandwidth),
            ..defaults
        };
        weighting.validate()?;
        let workers = args.workers.or(file.workers).unwrap_or_else(default_workers);
        if workers == 0 {
            return Err(ShearError::Config("worker count must be at least 1".into()));
        }
        Ok(Self {
            weighting,
            seed: args.seed.or(file.seed).unwrap_or(0),
            workers,
        })
    }

    /// Thread pool sized to the resolved worker count; every parallel
    /// section of a command runs inside it.
    pub fn thread_pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| ShearError::Config(format!("thread pool: {e}")))
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism()
        .map(NonZeroUsize::get)
        .unwrap_or(1)
}

impl From<PoolingFlag> for PoolingMode {
    fn from(flag: PoolingFlag) -> Self {
        match flag {
            PoolingFlag::Max => PoolingMode::Max,
            PoolingFlag::Mean => PoolingMode::Mean,
        }
    }
}

impl From<NormalizationFlag> for NormalizationMode {
    fn from(flag: NormalizationFlag) -> Self {
        match flag {
            NormalizationFlag::Cross => NormalizationMode::CrossRollout,
            NormalizationFlag::PerRollout => NormalizationMode::PerRollout,
        }
    }
}

impl From<MetricFlag> for DistanceMetric {
    fn from(flag: MetricFlag) -> Self {
        match flag {
            MetricFlag::Sinkhorn => DistanceMetric::Sinkhorn,
            MetricFlag::Cosine => DistanceMetric::CosineMean,
            MetricFlag::Chamfer => DistanceMetric::Chamfer,
            MetricFlag::Mmd => DistanceMetric::Mmd,
        }
    }
}
