//! `shear verify`: separation and concentration experiments with band
//! checks.
//!
//! Each check runs one simulator experiment, writes its report as JSON,
//! and asserts the bands the experiment is designed to satisfy:
//!
//! * separation checks assert the gap hypothesis `D̂ > 2·η̂` together with
//!   `mean_pre ≤ 1.25·η̂ ≤ D̂ − 1.25·η̂ ≤ mean_post` and a positive
//!   pre/post ordering;
//! * null checks assert AUC ∈ [0.45, 0.55] instead (no separation is
//!   expected at zero shift);
//! * piecewise checks assert the per-regime versions of the same bands;
//! * concentration checks assert the observed tail frequency stays under
//!   the theoretical bound plus three binomial standard errors.
//!
//! Exit is 0 when every check passes and 5 when any band fails, with the
//! failing reports named on stderr.

use std::fs;
use std::path::Path;

use shear::simulator::{
    concentration_check, run_group_separation, run_pairwise_separation, run_piecewise,
    run_symmetric_separation, ConcentrationReport, DivergenceScenario, PiecewiseReport,
    RegimeSpec, SeparationReport,
};
use shear::{Result, ShearError};

use crate::args::VerifyArgs;
use crate::config::EffectiveConfig;
use crate::manifest::{
    ensure_out_dir, unix_now, write_output, write_run_manifest, OutputGuard, RunManifest,
};

pub const SUMMARY_NAME: &str = "verify_summary.json";

/// Check-suite file: a list of experiments to run and assert.
#[derive(Debug, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    pub checks: Vec<CheckSpec>,
}

/// What a separation experiment asserts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assertion {
    /// The theorem bands around `D̂` and `η̂`.
    #[default]
    Separation,
    /// AUC ≈ 0.5 (zero-shift null scenarios).
    NullAuc,
}

#[derive(Debug, serde::Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckSpec {
    /// Correct/incorrect rollout pairs around one divergence point.
    Pairwise {
        name: String,
        scenario: DivergenceScenario,
        span_length: usize,
        trials: usize,
        #[serde(default)]
        assertion: Assertion,
    },
    /// One incorrect rollout against several correct rollouts with their
    /// own divergence points.
    Group {
        name: String,
        scenario: DivergenceScenario,
        span_length: usize,
        trials: usize,
    },
    /// Pairs scored in both directions under position drift.
    Symmetric {
        name: String,
        scenario: DivergenceScenario,
        span_length: usize,
        trials: usize,
        #[serde(default)]
        assertion: Assertion,
    },
    /// Alternating aligned/drifted regime sequences.
    Piecewise {
        name: String,
        scenario: DivergenceScenario,
        span_length: usize,
        trials: usize,
    },
    /// Empirical-distance tail frequency against its theoretical bound.
    Concentration {
        name: String,
        regime: RegimeSpec,
        span_length: usize,
        dim: usize,
        trials: usize,
        deviation: f64,
    },
}

impl CheckSpec {
    pub fn name(&self) -> &str {
        match self {
            CheckSpec::Pairwise { name, .. }
            | CheckSpec::Group { name, .. }
            | CheckSpec::Symmetric { name, .. }
            | CheckSpec::Piecewise { name, .. }
            | CheckSpec::Concentration { name, .. } => name,
        }
    }
}

/// One check's outcome in the summary file.
#[derive(Debug, serde::Serialize)]
struct CheckOutcome {
    name: String,
    passed: bool,
    /// First violated band, when failed.
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
    report_file: String,
}

pub fn load_spec(path: &Path) -> Result<VerifySpec> {
    let text = fs::read_to_string(path).map_err(|e| ShearError::io(path.display().to_string(), e))?;
    serde_json::from_str(&text)
        .map_err(|e| ShearError::Config(format!("check-suite file {}: {e}", path.display())))
}

/// The built-in suite: one check per verified statement, at desk scale.
/// d = 8 throughout; shifts are strong enough that `D̂ > 2·η̂` holds with
/// a wide margin, and the null check uses the same geometry at zero
/// shift.
pub fn default_suite() -> Result<VerifySpec> {
    let d = 8;
    Ok(VerifySpec {
        checks: vec![
            CheckSpec::Pairwise {
                name: "pairwise_strong_shift".into(),
                scenario: DivergenceScenario::single_shift(d, 400, 6.0),
                span_length: 100,
                trials: 200,
                assertion: Assertion::Separation,
            },
            CheckSpec::Group {
                name: "group_staggered_divergences".into(),
                scenario: DivergenceScenario::group_shift(d, &[100, 150, 200], 6.0)?,
                span_length: 50,
                trials: 120,
            },
            CheckSpec::Symmetric {
                name: "symmetric_position_drift".into(),
                scenario: DivergenceScenario::drifting_shift(d, 200, 4.0, 6.0)?,
                span_length: 100,
                trials: 80,
                assertion: Assertion::Separation,
            },
            CheckSpec::Piecewise {
                name: "piecewise_alternating".into(),
                scenario: DivergenceScenario::piecewise_alternating(d, vec![300, 700], 6.0)?,
                span_length: 100,
                trials: 60,
            },
            CheckSpec::Pairwise {
                name: "null_zero_shift".into(),
                scenario: DivergenceScenario::single_shift(d, 400, 0.0),
                span_length: 100,
                trials: 200,
                assertion: Assertion::NullAuc,
            },
            CheckSpec::Concentration {
                name: "distance_tail_bound".into(),
                regime: RegimeSpec::isotropic(vec![0.0; d], 1.0, 10.0),
                span_length: 25,
                dim: d,
                trials: 2000,
                deviation: 5.0,
            },
        ],
    })
}

pub fn run(args: &VerifyArgs) -> Result<i32> {
    let started = unix_now();
    let cfg = EffectiveConfig::resolve(&args.cfg)?;
    let spec = match &args.manifest {
        Some(path) => load_spec(path)?,
        None => default_suite()?,
    };
    if spec.checks.is_empty() {
        return Err(ShearError::Config("check suite has no checks".into()));
    }

    // Each check derives its own seed so adding or reordering checks does
    // not silently reuse streams.
    let pool = cfg.thread_pool()?;
    let results: Vec<(String, Option<String>)> = spec
        .checks
        .iter()
        .enumerate()
        .map(|(i, check)| {
            let seed = check_seed(cfg.seed, i as u64);
            pool.install(|| run_check(check, seed))
        })
        .collect::<Result<_>>()?;

    ensure_out_dir(&args.out)?;
    let mut guard = OutputGuard::new();
    let mut outputs = Vec::new();
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (check, (report_json, reason)) in spec.checks.iter().zip(&results) {
        let file_name = format!("{}.json", check.name());
        let path = args.out.join(&file_name);
        write_output(&mut guard, &path, report_json.as_bytes())?;
        outputs.push(path.display().to_string());
        match reason {
            None => println!("check {}: pass", check.name()),
            Some(reason) => {
                println!("check {}: FAIL ({reason})", check.name());
                failures.push(file_name.clone());
            }
        }
        outcomes.push(CheckOutcome {
            name: check.name().to_string(),
            passed: reason.is_none(),
            reason: reason.clone(),
            report_file: file_name,
        });
    }

    let summary_path = args.out.join(SUMMARY_NAME);
    let mut summary = serde_json::to_string_pretty(&outcomes)?;
    summary.push('\n');
    write_output(&mut guard, &summary_path, summary.as_bytes())?;
    outputs.push(summary_path.display().to_string());

    write_run_manifest(
        &mut guard,
        &args.out,
        &RunManifest {
            command: "verify",
            config: &cfg,
            seed: cfg.seed,
            started_unix: started,
            finished_unix: unix_now(),
            inputs: suite_inputs(args),
            outputs,
        },
    )?;
    guard.keep();

    if failures.is_empty() {
        Ok(0)
    } else {
        eprintln!("theorem-band check(s) failed: {}", failures.join(", "));
        Ok(5)
    }
}

/// Runs one check; returns its pretty-printed report and the first
/// violated band, if any.
fn run_check(check: &CheckSpec, seed: u64) -> Result<(String, Option<String>)> {
    match check {
        CheckSpec::Pairwise {
            scenario,
            span_length,
            trials,
            assertion,
            ..
        } => {
            let report = run_pairwise_separation(scenario, *span_length, *trials, seed)?;
            Ok((pretty(&report)?, eval_separation(&report, *assertion)))
        }
        CheckSpec::Group {
            scenario,
            span_length,
            trials,
            ..
        } => {
            let report = run_group_separation(scenario, *span_length, *trials, seed)?;
            Ok((pretty(&report)?, eval_separation(&report, Assertion::Separation)))
        }
        CheckSpec::Symmetric {
            scenario,
            span_length,
            trials,
            assertion,
            ..
        } => {
            let report = run_symmetric_separation(scenario, *span_length, *trials, seed)?;
            Ok((pretty(&report)?, eval_separation(&report, *assertion)))
        }
        CheckSpec::Piecewise {
            scenario,
            span_length,
            trials,
            ..
        } => {
            let report = run_piecewise(scenario, *span_length, *trials, seed)?;
            Ok((pretty(&report)?, eval_piecewise(&report)))
        }
        CheckSpec::Concentration {
            regime,
            span_length,
            dim,
            trials,
            deviation,
            ..
        } => {
            let report = concentration_check(regime, *span_length, *dim, *trials, *deviation, seed)?;
            Ok((pretty(&report)?, eval_concentration(&report)))
        }
    }
}

fn pretty<T: serde::Serialize>(report: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    Ok(text)
}

fn eval_separation(r: &SeparationReport, assertion: Assertion) -> Option<String> {
    match assertion {
        Assertion::NullAuc => {
            if (0.45..=0.55).contains(&r.auc) {
                None
            } else {
                Some(format!("null AUC {:.4} outside [0.45, 0.55]", r.auc))
            }
        }
        Assertion::Separation => {
            let slack = 1.25 * r.eta_hat;
            if !r.condition_met {
                Some(format!(
                    "gap hypothesis failed: D̂ {:.4} ≤ 2·η̂ {:.4}",
                    r.d_hat,
                    2.0 * r.eta_hat
                ))
            } else if r.mean_pre > slack {
                Some(format!(
                    "pre mean {:.4} above noise band {:.4}",
                    r.mean_pre, slack
                ))
            } else if r.mean_post < r.d_hat - slack {
                Some(format!(
                    "post mean {:.4} below separation band {:.4}",
                    r.mean_post,
                    r.d_hat - slack
                ))
            } else if r.mean_post <= r.mean_pre {
                Some(format!(
                    "post mean {:.4} not above pre mean {:.4}",
                    r.mean_post, r.mean_pre
                ))
            } else {
                None
            }
        }
    }
}

fn eval_piecewise(r: &PiecewiseReport) -> Option<String> {
    let slack = 1.25 * r.eta_hat;
    if r.aligned_mean > slack {
        return Some(format!(
            "aligned mean {:.4} above noise band {:.4}",
            r.aligned_mean, slack
        ));
    }
    for (i, (mean_r, d_hat_r)) in r.drifted_means.iter().zip(&r.d_hats).enumerate() {
        if *mean_r < d_hat_r - slack {
            return Some(format!(
                "drifted regime {i} mean {:.4} below separation band {:.4}",
                mean_r,
                d_hat_r - slack
            ));
        }
        if *mean_r <= r.aligned_mean {
            return Some(format!(
                "drifted regime {i} mean {:.4} not above aligned mean {:.4}",
                mean_r, r.aligned_mean
            ));
        }
    }
    None
}

fn eval_concentration(r: &ConcentrationReport) -> Option<String> {
    let limit = r.bound + 3.0 * r.std_error;
    if r.frequency <= limit {
        None
    } else {
        Some(format!(
            "tail frequency {:.5} above bound {:.5} (+3 SE)",
            r.frequency, limit
        ))
    }
}

fn check_seed(base: u64, index: u64) -> u64 {
    base.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn suite_inputs(args: &VerifyArgs) -> Vec<(String, String)> {
    let mut inputs = Vec::new();
    if let Some(manifest) = &args.manifest {
        inputs.push(("manifest".to_string(), manifest.display().to_string()));
    }
    if let Some(config) = &args.cfg.config {
        inputs.push(("config".to_string(), config.display().to_string()));
    }
    inputs
}
