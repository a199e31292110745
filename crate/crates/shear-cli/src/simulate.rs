//! `shear simulate`: synthetic corpus generation with ground truth.
//!
//! The scenario file describes a divergence scenario and the corpus shape.
//! Output is a corpus in the standard manifest + data format, plus a
//! per-token label CSV marking which tokens are governed by a regime other
//! than the aligned one.

use std::fs;
use std::path::Path;

use shear::corpus::write_group;
use shear::model::RolloutGroup;
use shear::simulator::{drift_labels, sample_rollout_group_stream, DivergenceScenario};
use shear::{Result, ShearError};

use crate::args::SimulateArgs;
use crate::config::EffectiveConfig;
use crate::manifest::{
    csv_fail, ensure_out_dir, unix_now, write_output, write_run_manifest, OutputGuard, RunManifest,
};

pub const CORPUS_MANIFEST_NAME: &str = "corpus_manifest.json";
pub const CORPUS_DATA_NAME: &str = "corpus.bin";
pub const LABELS_NAME: &str = "labels.csv";

/// Scenario file: the divergence scenario plus the corpus shape. `groups`
/// defaults to 1; every group redraws the same scenario on fresh RNG
/// streams.
#[derive(Debug, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    pub scenario: DivergenceScenario,
    pub group_size: usize,
    pub correct_count: usize,
    pub t_total: usize,
    pub dim: usize,
    #[serde(default = "one")]
    pub groups: usize,
}

fn one() -> usize {
    1
}

pub fn load_spec(path: &Path) -> Result<SimulateSpec> {
    let text = fs::read_to_string(path).map_err(|e| ShearError::io(path.display().to_string(), e))?;
    serde_json::from_str(&text)
        .map_err(|e| ShearError::Config(format!("scenario file {}: {e}", path.display())))
}

pub fn run(args: &SimulateArgs) -> Result<i32> {
    let started = unix_now();
    let cfg = EffectiveConfig::resolve(&args.cfg)?;
    let spec = load_spec(&args.manifest)?;
    if spec.groups == 0 {
        return Err(ShearError::Config("corpus needs at least one group".into()));
    }

    // Group i draws rollout streams [i·G, (i+1)·G), so groups never share
    // a stream and the corpus is reproducible from (seed, shape) alone.
    let mut groups = Vec::with_capacity(spec.groups);
    for i in 0..spec.groups {
        let sampled = sample_rollout_group_stream(
            &spec.scenario,
            spec.group_size,
            spec.correct_count,
            spec.t_total,
            spec.dim,
            cfg.seed,
            (i * spec.group_size) as u64,
        )?;
        groups.push(RolloutGroup::new(
            format!("g{i}"),
            sampled.rollouts().to_vec(),
        )?);
    }
    let labels = drift_labels(
        &spec.scenario,
        spec.group_size,
        spec.correct_count,
        spec.t_total,
    )?;

    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["group_id", "rollout_id", "token_index", "drifted"])
        .map_err(csv_fail)?;
    for group in &groups {
        for (rollout, rollout_labels) in group.rollouts().iter().zip(&labels) {
            for (t, &drifted) in (1..=spec.t_total).zip(rollout_labels) {
                csv.write_record([
                    group.id.as_str(),
                    rollout.id.as_str(),
                    &t.to_string(),
                    if drifted { "1" } else { "0" },
                ])
                .map_err(csv_fail)?;
            }
        }
    }
    let labels_bytes = csv.into_inner().expect("in-memory writer cannot fail");

    ensure_out_dir(&args.out)?;
    let mut guard = OutputGuard::new();
    let manifest_path = args.out.join(CORPUS_MANIFEST_NAME);
    let data_path = args.out.join(CORPUS_DATA_NAME);
    let labels_path = args.out.join(LABELS_NAME);
    guard.register(&manifest_path);
    guard.register(&data_path);
    write_group(&groups, &manifest_path, &data_path)?;
    write_output(&mut guard, &labels_path, &labels_bytes)?;

    write_run_manifest(
        &mut guard,
        &args.out,
        &RunManifest {
            command: "simulate",
            config: &cfg,
            seed: cfg.seed,
            started_unix: started,
            finished_unix: unix_now(),
            inputs: scenario_inputs(args),
            outputs: vec![
                manifest_path.display().to_string(),
                data_path.display().to_string(),
                labels_path.display().to_string(),
            ],
        },
    )?;
    guard.keep();

    println!(
        "sampled {} group(s) of {} rollout(s), {} token(s) each -> {}",
        spec.groups,
        spec.group_size,
        spec.t_total,
        args.out.display()
    );
    Ok(0)
}

fn scenario_inputs(args: &SimulateArgs) -> Vec<(String, String)> {
    let mut inputs = vec![("manifest".to_string(), args.manifest.display().to_string())];
    if let Some(config) = &args.cfg.config {
        inputs.push(("config".to_string(), config.display().to_string()));
    }
    inputs
}
