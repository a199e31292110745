//! Acceptance suite: fourteen release checks covering the transport
//! bounds, the weighting algebra, the separation experiments, and the
//! command-line contract. Each check prints one `criterion NN ...: pass`
//! line (visible with `--nocapture`); a failing check fails its test.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use tempfile::TempDir;

use shear::model::{HiddenStateMatrix, Rollout, RolloutGroup, SpanConfig};
use shear::simulator::{
    concentration_check, run_group_separation, run_pairwise_separation, DivergenceScenario,
    RegimeSpec,
};
use shear::transport::{exact_w1, sinkhorn, PointCloud, SinkhornConfig};
use shear::weighting::{grpo_advantages, shear_weight_group, PoolingMode, WeightingConfig};

/// Uniform random cloud with `n` points in `[-scale, scale]^d`.
fn random_cloud(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> PointCloud {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-scale..=scale)).collect())
        .collect();
    PointCloud::from_rows(&rows).unwrap()
}

/// Random rollout group with the given rewards; token counts are drawn
/// from `1..=t_max` per rollout, hidden states uniform in `[-2, 2]`.
fn random_group(rng: &mut ChaCha8Rng, rewards: &[bool], t_max: usize, d: usize) -> RolloutGroup {
    let rollouts = rewards
        .iter()
        .enumerate()
        .map(|(i, &reward)| {
            let t = rng.gen_range(1..=t_max);
            let data: Vec<f32> = (0..t * d).map(|_| rng.gen_range(-2.0f32..=2.0)).collect();
            Rollout {
                id: format!("r{i}"),
                reward,
                hidden: HiddenStateMatrix::new(data, t, d).unwrap(),
            }
        })
        .collect();
    RolloutGroup::new("g", rollouts).unwrap()
}

/// Rewards with rollout 0 correct, rollout 1 incorrect, the rest random,
/// so the opposing sets are never empty.
fn mixed_rewards(rng: &mut ChaCha8Rng, g: usize) -> Vec<bool> {
    (0..g).map(|i| match i {
        0 => true,
        1 => false,
        _ => rng.gen_bool(0.5),
    }).collect()
}

/// Default weighting config with a small span window.
fn tiny_cfg(window: usize, stride: usize) -> WeightingConfig {
    WeightingConfig {
        span_cfg: SpanConfig::new(window, stride).unwrap(),
        ..WeightingConfig::default()
    }
}

/// Stable ranking of `values` by ascending value.
fn argsort(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
    idx
}

fn assert_close(actual: f64, expected: f64, context: &str) {
    let tol = 1e-9 * (1.0 + expected.abs());
    assert!(
        (actual - expected).abs() <= tol,
        "{context}: {actual} vs {expected} (tol {tol})"
    );
}

#[test]
fn criterion_01_sinkhorn_stays_within_the_entropic_band_of_exact_w1() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for pair in 0..500 {
        let n = rng.gen_range(1..=16);
        let d = rng.gen_range(1..=8);
        let p = random_cloud(&mut rng, n, d, 1.0);
        let q = random_cloud(&mut rng, n, d, 1.0);
        let w1 = exact_w1(&p, &q).unwrap();
        for &eps in &[0.05, 0.5, 4.5] {
            let cfg = SinkhornConfig { epsilon: eps, ..SinkhornConfig::default() };
            let r = sinkhorn(&p, &q, &cfg).unwrap();
            let gap = r.value - w1;
            let band = eps * (n as f64).ln() + 1e-6;
            assert!(
                (0.0..=band).contains(&gap),
                "pair {pair} eps {eps} n {n}: gap {gap} outside [0, {band}]"
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    println!("criterion 01 (sinkhorn within [W1, W1 + eps ln n] on 500 random pairs): pass");
}

#[test]
fn criterion_02_entropic_slack_at_production_scale() {
    // The band width from criterion 1 evaluated at the default epsilon and
    // a 100-token span.
    let slack = 4.5 * (100f64).ln();
    assert!((20.6..=20.9).contains(&slack), "eps ln n = {slack}");
    println!("criterion 02 (entropic slack 4.5 ln 100 lands in [20.6, 20.9]): pass");
}

/// Literal re-derivation of the weighting pipeline, written directly from
/// the defining formulas and kept independent of the library's span,
/// table, and pooling helpers. Returns per-rollout weights and weighted
/// advantages.
fn reference_weighting(
    group: &RolloutGroup,
    w: usize,
    s: usize,
    solver: &SinkhornConfig,
    advantage_epsilon: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let rollouts = group.rollouts();
    let g = rollouts.len() as f64;

    // Groupwise advantages from the reward population statistics.
    let rewards: Vec<f64> = rollouts.iter().map(|r| f64::from(u8::from(r.reward))).collect();
    let mean = rewards.iter().sum::<f64>() / g;
    let variance = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g;
    let advantages: Vec<f64> =
        rewards.iter().map(|r| (r - mean) / (variance.sqrt() + advantage_epsilon)).collect();

    // Global mean hidden-state norm across every token of every rollout.
    let mut norm_sum = 0.0;
    let mut token_count = 0usize;
    for r in rollouts {
        for t in 1..=r.tokens() {
            norm_sum += r.hidden.row(t).iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            token_count += 1;
        }
    }
    let mean_norm = norm_sum / token_count as f64;

    // Overlapping spans: a_k = 1 + (k-1)s, b_k = min(a_k + w - 1, T),
    // ending with the first span that touches T.
    let spans_of = |t_total: usize| -> Vec<(usize, usize)> {
        let mut spans = Vec::new();
        let mut a = 1;
        loop {
            let b = (a + w - 1).min(t_total);
            spans.push((a, b));
            if b == t_total {
                return spans;
            }
            a += s;
        }
    };
    let cloud_of = |r: &Rollout, a: usize, b: usize| -> PointCloud {
        let rows: Vec<Vec<f64>> = (a..=b)
            .map(|t| r.hidden.row(t).iter().map(|&v| f64::from(v)).collect())
            .collect();
        PointCloud::from_rows(&rows).unwrap()
    };

    let mut all_weights = Vec::new();
    let mut all_weighted = Vec::new();
    for (i, r) in rollouts.iter().enumerate() {
        let opposing: Vec<usize> =
            (0..rollouts.len()).filter(|&j| rollouts[j].reward != r.reward).collect();
        let spans = spans_of(r.tokens());
        let mut omega = vec![1.0f64; r.tokens()];
        if !opposing.is_empty() {
            // d_k: minimum transport distance from span k to any span of
            // any opposing rollout.
            let d_k: Vec<f64> = spans
                .iter()
                .map(|&(a, b)| {
                    let pc = cloud_of(r, a, b);
                    let mut best = f64::INFINITY;
                    for &j in &opposing {
                        for &(oa, ob) in &spans_of(rollouts[j].tokens()) {
                            let qc = cloud_of(&rollouts[j], oa, ob);
                            best = best.min(sinkhorn(&pc, &qc, solver).unwrap().value);
                        }
                    }
                    best
                })
                .collect();
            // omega_t: largest covering-span distance, scaled by the mean norm.
            for (t0, w_t) in omega.iter_mut().enumerate() {
                let t = t0 + 1;
                let pooled = spans
                    .iter()
                    .zip(&d_k)
                    .filter(|(&(a, b), _)| a <= t && t <= b)
                    .map(|(_, &d)| d)
                    .fold(f64::NEG_INFINITY, f64::max);
                *w_t = pooled / mean_norm;
            }
        }
        let weighted: Vec<f64> = omega.iter().map(|w_t| advantages[i] * w_t).collect();
        all_weights.push(omega);
        all_weighted.push(weighted);
    }
    (all_weights, all_weighted)
}

#[test]
fn criterion_03_weighting_matches_a_literal_formula_reference() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let cfg = tiny_cfg(8, 4);
    for case in 0..50 {
        let g = rng.gen_range(1..=4);
        let rewards: Vec<bool> = (0..g).map(|_| rng.gen_bool(0.5)).collect();
        let d = rng.gen_range(1..=6);
        let group = random_group(&mut rng, &rewards, 30, d);
        let out = shear_weight_group(&group, &cfg).unwrap();
        let (ref_weights, ref_weighted) =
            reference_weighting(&group, 8, 4, &cfg.sinkhorn_cfg, cfg.advantage_epsilon);
        for (i, tw) in out.rollout_weights.iter().enumerate() {
            for (t, (&got, &want)) in tw.weights.iter().zip(&ref_weights[i]).enumerate() {
                assert_close(got, want, &format!("case {case} rollout {i} omega_{}", t + 1));
            }
            for (t, (&got, &want)) in tw.weighted.iter().zip(&ref_weighted[i]).enumerate() {
                assert_close(got, want, &format!("case {case} rollout {i} weighted_{}", t + 1));
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    println!("criterion 03 (weights match an independent literal-formula reference): pass");
}

#[test]
fn criterion_04_uniform_rewards_reduce_to_plain_grpo() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let cfg = tiny_cfg(8, 4);
    for case in 0..10 {
        let rewards = vec![case % 2 == 0; rng.gen_range(2..=5)];
        let group = random_group(&mut rng, &rewards, 40, 5);
        let out = shear_weight_group(&group, &cfg).unwrap();
        let plain = grpo_advantages(&rewards, cfg.advantage_epsilon).unwrap();
        for (i, tw) in out.rollout_weights.iter().enumerate() {
            assert!(tw.weights.iter().all(|&w| w == 1.0), "case {case} rollout {i}");
            assert_eq!(tw.advantage.to_bits(), plain[i].to_bits());
            assert!(tw.weighted.iter().all(|&x| x.to_bits() == plain[i].to_bits()));
        }
    }
    println!("criterion 04 (uniform rewards give unit weights, bit-equal to plain grpo): pass");
}

#[test]
fn criterion_05_norm_scaling_preserves_span_distance_ranking() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let cfg = tiny_cfg(8, 4);
    for case in 0..20 {
        let g = rng.gen_range(2..=4);
        let rewards = mixed_rewards(&mut rng, g);
        let group = random_group(&mut rng, &rewards, 30, 4);
        let out = shear_weight_group(&group, &cfg).unwrap();
        let stats = out.stats.expect("mixed groups compute norm statistics");
        let mut raw = Vec::new();
        for entry in &out.table.entries {
            raw.extend(entry.as_ref().expect("mixed groups fill every row").iter().copied());
        }
        let scaled: Vec<f64> = raw.iter().map(|d| d / stats.mean_norm).collect();
        assert_eq!(argsort(&raw), argsort(&scaled), "case {case}");
    }
    println!("criterion 05 (span distance ranking is invariant to norm scaling): pass");
}

#[test]
fn criterion_06_strong_shift_separates_pre_from_post_across_seeds() {
    let start = Instant::now();
    let scenario = DivergenceScenario::single_shift(8, 400, 6.0);
    let mut ordered = 0usize;
    for k in 0..20u64 {
        let report = run_pairwise_separation(&scenario, 100, 200, 1000 + 7 * k).unwrap();
        assert!(
            report.condition_met,
            "seed {k}: d_hat {} vs eta_hat {}",
            report.d_hat, report.eta_hat
        );
        ordered += usize::from(report.mean_post > report.mean_pre);
    }
    assert!(ordered >= 19, "only {ordered}/20 seeds ordered post above pre");
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    println!("criterion 06 (post-divergence spans separate from pre on 20 seeds): pass");
}

#[test]
fn criterion_07_staggered_group_divergences_respect_the_noise_band() {
    let scenario = DivergenceScenario::group_shift(8, &[100, 150, 200], 6.0).unwrap();
    let report = run_group_separation(&scenario, 50, 120, 424).unwrap();
    assert!(
        report.mean_pre <= 1.25 * report.eta_hat,
        "pre mean {} above noise band {}",
        report.mean_pre,
        1.25 * report.eta_hat
    );
    assert!(
        report.mean_post >= report.d_hat - 1.25 * report.eta_hat,
        "post mean {} below {} - {}",
        report.mean_post,
        report.d_hat,
        1.25 * report.eta_hat
    );
    assert!(report.mean_post > report.mean_pre);
    println!("criterion 07 (staggered divergences keep pre spans in the noise band): pass");
}

#[test]
fn criterion_08_auc_grows_with_the_shift_strength() {
    let start = Instant::now();
    let shifts = [0.0, 0.75, 1.5, 3.0, 6.0];
    let aucs: Vec<f64> = shifts
        .iter()
        .enumerate()
        .map(|(i, &shift)| {
            let scenario = DivergenceScenario::single_shift(8, 400, shift);
            run_pairwise_separation(&scenario, 100, 200, 2000 + i as u64).unwrap().auc
        })
        .collect();
    for (i, pair) in aucs.windows(2).enumerate() {
        assert!(
            pair[1] >= pair[0] - 0.03,
            "auc dropped between shifts {} and {}: {:?}",
            shifts[i],
            shifts[i + 1],
            aucs
        );
    }
    assert!(aucs[4] >= 0.97, "strongest shift auc {} below 0.97", aucs[4]);
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(180), "took {elapsed:?}");
    println!("criterion 08 (auc is monotone in shift strength and tops 0.97): pass");
}

#[test]
fn criterion_09_null_scenario_auc_is_chance_level() {
    let scenario = DivergenceScenario::single_shift(8, 400, 0.0);
    let report = run_pairwise_separation(&scenario, 100, 200, 909).unwrap();
    assert!(
        (0.45..=0.55).contains(&report.auc),
        "null auc {} outside [0.45, 0.55]",
        report.auc
    );
    println!("criterion 09 (zero-shift auc stays at chance level): pass");
}

#[test]
fn criterion_10_exact_w1_dominates_its_closed_form_lower_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    for pair in 0..200 {
        let n = rng.gen_range(1..=12);
        let m = rng.gen_range(1..=12);
        let d = rng.gen_range(1..=8);
        let p = random_cloud(&mut rng, n, d, 2.0);
        let q = random_cloud(&mut rng, m, d, 2.0);
        let w1 = exact_w1(&p, &q).unwrap();

        // Mean-gap bound: transporting the barycenters is never harder
        // than transporting the clouds.
        let gap = p.mean() - q.mean();
        let mean_gap = gap.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(w1 >= mean_gap - 1e-9, "pair {pair}: w1 {w1} below mean gap {mean_gap}");

        // Shape bound: distance-to-reference averages are 1-Lipschitz
        // statistics, so their difference lower-bounds W1.
        let avg_dist = |cloud: &PointCloud, c: &[f64]| {
            (0..cloud.len())
                .map(|i| {
                    cloud
                        .point(i)
                        .iter()
                        .zip(c.iter())
                        .map(|(&a, &b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum::<f64>()
                / cloud.len() as f64
        };
        for _ in 0..3 {
            let c: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..=2.0)).collect();
            let shape = (avg_dist(&p, &c) - avg_dist(&q, &c)).abs();
            assert!(w1 >= shape - 1e-9, "pair {pair}: w1 {w1} below shape bound {shape}");
        }
    }
    println!("criterion 10 (exact W1 dominates mean-gap and shape lower bounds): pass");
}

#[test]
fn criterion_11_distance_concentration_respects_the_tail_bound() {
    let regime = RegimeSpec::isotropic(vec![0.0; 8], 1.0, 10.0);
    let report = concentration_check(&regime, 25, 8, 2000, 5.0, 111).unwrap();
    // Tail bound exp(-n u^2 / 2M^2) at n=25, u=M/2=5, M=10.
    assert!((report.bound - (-3.125f64).exp()).abs() < 1e-12);
    assert!(
        report.frequency <= report.bound + 3.0 * report.std_error,
        "frequency {} above bound {} + 3 * {}",
        report.frequency,
        report.bound,
        report.std_error
    );
    println!("criterion 11 (exceedance frequency stays under the tail bound): pass");
}

#[test]
fn criterion_12_max_pooling_dominates_mean_pooling() {
    let mut rng = ChaCha8Rng::seed_from_u64(112);
    let max_cfg = tiny_cfg(8, 4);
    let mean_cfg = WeightingConfig { pooling: PoolingMode::Mean, ..tiny_cfg(8, 4) };
    for case in 0..20 {
        let g = rng.gen_range(2..=4);
        let rewards = mixed_rewards(&mut rng, g);
        let group = random_group(&mut rng, &rewards, 30, 4);
        let by_max = shear_weight_group(&group, &max_cfg).unwrap();
        let by_mean = shear_weight_group(&group, &mean_cfg).unwrap();
        for (i, (wmax, wmean)) in
            by_max.rollout_weights.iter().zip(&by_mean.rollout_weights).enumerate()
        {
            for (t, (&a, &b)) in wmax.weights.iter().zip(&wmean.weights).enumerate() {
                // Tiny slack: a mean of equal summands can round one ulp
                // above the common value.
                assert!(
                    a >= b - 1e-12 * (1.0 + b.abs()),
                    "case {case} rollout {i} token {}: max {a} < mean {b}",
                    t + 1
                );
            }
        }
    }
    println!("criterion 12 (max pooling dominates mean pooling tokenwise): pass");
}

/// Command handle for the compiled binary.
fn shear_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shear"))
}

/// Runs the binary, asserting success, and returns nothing.
fn run_bin(args: &[&str]) {
    let out = shear_bin().args(args).output().expect("failed to spawn the shear binary");
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Writes a single-divergence sampling spec and returns its path.
fn write_spec(
    dir: &Path,
    dim: usize,
    tau: usize,
    shift: f64,
    group_size: usize,
    correct_count: usize,
    t_total: usize,
) -> PathBuf {
    let mut drifted_mean = vec![0.0; dim];
    drifted_mean[0] = shift;
    let spec = json!({
        "scenario": {
            "aligned": {"mean": vec![0.0; dim], "covariance_scale": 1.0, "support_radius": 10.0},
            "drifted": [{"mean": drifted_mean, "covariance_scale": 1.0, "support_radius": 10.0}],
            "boundaries": [tau]
        },
        "group_size": group_size,
        "correct_count": correct_count,
        "t_total": t_total,
        "dim": dim,
        "groups": 1
    });
    let path = dir.join("spec.json");
    fs::write(&path, serde_json::to_string_pretty(&spec).unwrap()).unwrap();
    path
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
}

#[test]
fn criterion_13_cli_outputs_are_byte_identical_across_runs_and_workers() {
    let tmp = TempDir::new().unwrap();
    let spec = write_spec(tmp.path(), 4, 60, 4.0, 4, 2, 120);

    let simulate = |name: &str, workers: &str| -> PathBuf {
        let out = tmp.path().join(name);
        run_bin(&[
            "simulate",
            "--manifest",
            spec.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "13",
            "--workers",
            workers,
        ]);
        out
    };
    let sim_a = simulate("sim_a", "1");
    let sim_b = simulate("sim_b", "1");
    let sim_c = simulate("sim_c", "4");
    for name in ["corpus_manifest.json", "corpus.bin", "labels.csv"] {
        assert_eq!(read(&sim_a.join(name)), read(&sim_b.join(name)), "{name} differs across runs");
        assert_eq!(
            read(&sim_a.join(name)),
            read(&sim_c.join(name)),
            "{name} differs across worker counts"
        );
    }

    let weigh = |name: &str, workers: &str| -> Vec<u8> {
        let out = tmp.path().join(name);
        run_bin(&[
            "weight",
            "--manifest",
            sim_a.join("corpus_manifest.json").to_str().unwrap(),
            "--data",
            sim_a.join("corpus.bin").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--window",
            "30",
            "--stride",
            "15",
            "--workers",
            workers,
        ]);
        read(&out.join("weights.csv"))
    };
    let weights = weigh("w_a", "1");
    assert_eq!(weights, weigh("w_b", "1"), "weights differ across runs");
    assert_eq!(weights, weigh("w_c", "4"), "weights differ across worker counts");
    println!("criterion 13 (simulate and weight outputs are byte-identical across runs and workers): pass");
}

#[test]
fn criterion_14_weighting_a_full_size_group_stays_under_five_seconds() {
    let tmp = TempDir::new().unwrap();
    let spec = write_spec(tmp.path(), 64, 500, 4.0, 8, 4, 1000);
    let corpus = tmp.path().join("corpus");
    run_bin(&[
        "simulate",
        "--manifest",
        spec.to_str().unwrap(),
        "--out",
        corpus.to_str().unwrap(),
        "--seed",
        "14",
    ]);

    let out = tmp.path().join("weights");
    let start = Instant::now();
    run_bin(&[
        "weight",
        "--manifest",
        corpus.join("corpus_manifest.json").to_str().unwrap(),
        "--data",
        corpus.join("corpus.bin").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--workers",
        "4",
    ]);
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");

    let rows = String::from_utf8(read(&out.join("weights.csv"))).unwrap().lines().count();
    assert_eq!(rows, 1 + 8 * 1000, "expected a header plus one row per token");
    println!("criterion 14 (default-config weighting of 8 x 1000 x 64 finishes in under 5 s): pass");
}
