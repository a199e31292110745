//! `shear heatmap`: normalized span-pair distances between two rollouts.
//!
//! Writes the distance matrix as CSV (row `k` = span `k` of the first
//! rollout, column `l` = span `l` of the second) plus a JSON sidecar with
//! the span boundaries behind each axis. Swapping the two ids produces the
//! exact transposed matrix.

use shear::corpus::load_group;
use shear::diagnostics::distance_heatmap;
use shear::model::{Rollout, RolloutGroup};
use shear::spans::decompose;
use shear::{Result, ShearError};

use crate::args::HeatmapArgs;
use crate::config::EffectiveConfig;
use crate::manifest::{
    ensure_out_dir, fmt_real, unix_now, write_output, write_run_manifest, OutputGuard, RunManifest,
};

pub const HEATMAP_NAME: &str = "heatmap.csv";
pub const SIDECAR_NAME: &str = "heatmap.json";

/// Sidecar describing the heatmap axes: 1-based inclusive span bounds in
/// matrix order, plus the identifying context.
#[derive(Debug, serde::Serialize)]
struct Sidecar<'a> {
    group_id: &'a str,
    rollout_a: &'a str,
    rollout_b: &'a str,
    metric: shear::transport::DistanceMetric,
    window: usize,
    stride: usize,
    rows: usize,
    cols: usize,
    spans_a: Vec<(usize, usize)>,
    spans_b: Vec<(usize, usize)>,
}

pub fn run(args: &HeatmapArgs) -> Result<i32> {
    let started = unix_now();
    let cfg = EffectiveConfig::resolve(&args.cfg)?;
    let groups = load_group(&args.manifest, &args.data)?;
    let (group, a, b) = resolve_pair(&groups, &args.rollout_a, &args.rollout_b)?;

    let pool = cfg.thread_pool()?;
    let matrix = pool.install(|| distance_heatmap(a, b, &cfg.weighting))?;

    let mut csv_text = String::new();
    for row in matrix.rows() {
        let cells: Vec<String> = row.iter().map(|&x| fmt_real(x)).collect();
        csv_text.push_str(&cells.join(","));
        csv_text.push('\n');
    }

    let span_bounds = |tokens: usize| -> Vec<(usize, usize)> {
        decompose(tokens, &cfg.weighting.span_cfg)
            .iter()
            .map(|s| (s.a, s.b))
            .collect()
    };
    let sidecar = Sidecar {
        group_id: &group.id,
        rollout_a: &a.id,
        rollout_b: &b.id,
        metric: cfg.weighting.metric,
        window: cfg.weighting.span_cfg.window,
        stride: cfg.weighting.span_cfg.stride,
        rows: matrix.nrows(),
        cols: matrix.ncols(),
        spans_a: span_bounds(a.tokens()),
        spans_b: span_bounds(b.tokens()),
    };
    let mut sidecar_text = serde_json::to_string_pretty(&sidecar)?;
    sidecar_text.push('\n');

    ensure_out_dir(&args.out)?;
    let mut guard = OutputGuard::new();
    let csv_path = args.out.join(HEATMAP_NAME);
    let sidecar_path = args.out.join(SIDECAR_NAME);
    write_output(&mut guard, &csv_path, csv_text.as_bytes())?;
    write_output(&mut guard, &sidecar_path, sidecar_text.as_bytes())?;

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
            command: "heatmap",
            config: &cfg,
            seed: cfg.seed,
            started_unix: started,
            finished_unix: unix_now(),
            inputs,
            outputs: vec![
                csv_path.display().to_string(),
                sidecar_path.display().to_string(),
            ],
        },
    )?;
    guard.keep();

    println!(
        "heatmap {}x{} for {} vs {} -> {}",
        matrix.nrows(),
        matrix.ncols(),
        a.id,
        b.id,
        csv_path.display()
    );
    Ok(0)
}

/// Finds the first group containing both ids. Both ids must resolve in
/// the same group; the two may be equal (a rollout against itself).
fn resolve_pair<'a>(
    groups: &'a [RolloutGroup],
    id_a: &str,
    id_b: &str,
) -> Result<(&'a RolloutGroup, &'a Rollout, &'a Rollout)> {
    for group in groups {
        if let (Ok(i), Ok(j)) = (group.index_of(id_a), group.index_of(id_b)) {
            return Ok((group, &group.rollouts()[i], &group.rollouts()[j]));
        }
    }
    Err(ShearError::Lookup(format!(
        "no group contains both rollouts {id_a:?} and {id_b:?}"
    )))
}
