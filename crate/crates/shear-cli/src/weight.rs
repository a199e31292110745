//! `shear weight`: batch weighting of a rollout corpus.
//!
//! Reads the corpus, weights every group, and writes one CSV row per
//! token, ordered by (group, rollout, token). All computation happens
//! first; files are written by a single writer at the end.

use rayon::prelude::*;

use shear::corpus::load_group;
use shear::weighting::{shear_weight_group, GroupWeighting};
use shear::Result;

use crate::args::WeightArgs;
use crate::config::EffectiveConfig;
use crate::manifest::{
    csv_fail, ensure_out_dir, fmt_real, unix_now, write_output, write_run_manifest, OutputGuard,
    RunManifest,
};

pub const WEIGHTS_NAME: &str = "weights.csv";

pub fn run(args: &WeightArgs) -> Result<i32> {
    let started = unix_now();
    let cfg = EffectiveConfig::resolve(&args.cfg)?;
    let groups = load_group(&args.manifest, &args.data)?;

    let pool = cfg.thread_pool()?;
    let weighted: Vec<GroupWeighting> = pool.install(|| {
        groups
            .par_iter()
            .map(|g| shear_weight_group(g, &cfg.weighting))
            .collect::<Result<_>>()
    })?;

    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record([
        "group_id",
        "rollout_id",
        "token_index",
        "weight",
        "advantage",
        "weighted_advantage",
    ])
    .map_err(csv_fail)?;
    for (group, gw) in groups.iter().zip(&weighted) {
        for (rollout, tw) in group.rollouts().iter().zip(&gw.rollout_weights) {
            for t in 1..=rollout.tokens() {
                csv.write_record([
                    group.id.as_str(),
                    rollout.id.as_str(),
                    &t.to_string(),
                    &fmt_real(tw.weights[t - 1]),
                    &fmt_real(tw.advantage),
                    &fmt_real(tw.weighted[t - 1]),
                ])
                .map_err(csv_fail)?;
            }
        }
    }
    let csv_bytes = csv.into_inner().expect("in-memory writer cannot fail");

    ensure_out_dir(&args.out)?;
    let mut guard = OutputGuard::new();
    let weights_path = args.out.join(WEIGHTS_NAME);
    write_output(&mut guard, &weights_path, &csv_bytes)?;

    let mut inputs = vec![
        ("manifest".to_string(), args.manifest.display().to_string()),
        ("data".to_string(), args.data.display().to_string()),
    ];
    if let Some(config) = &args.cfg.config {
        inputs.push(("config".to_string(), config.display().to_string()));
    }
    write_run_manifest(
        &mut guard,
        &args.out,
        &RunManifest {
            command: "weight",
            config: &cfg,
            seed: cfg.seed,
            started_unix: started,
            finished_unix: unix_now(),
            inputs,
            outputs: vec![weights_path.display().to_string()],
        },
    )?;
    guard.keep();

    let tokens: usize = groups.iter().map(|g| g.total_tokens()).sum();
    println!(
        "weighted {} group(s), {} token(s) -> {}",
        groups.len(),
        tokens,
        weights_path.display()
    );
    Ok(0)
}
