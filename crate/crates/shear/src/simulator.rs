//! Synthetic rollout-group generator for verifying the separation theory
//! at desk scale.
//!
//! Hidden states are drawn from isotropic Gaussian regimes clipped to a
//! ball of radius `M`: correct rollouts follow the aligned regime (or, in
//! group scenarios, diverge into a per-rollout regime at their own
//! divergence point), while incorrect rollouts follow the aligned regime
//! up to a boundary and drifted regimes after it, alternating for
//! piecewise scenarios. On top of the sampler sit Monte-Carlo estimators
//! for the finite-sample noise floor and population gaps, experiment
//! runners for pairwise, group, symmetric, and piecewise separation, and
//! a concentration check for the tail bound.
//!
//! Determinism contract: all randomness comes from ChaCha8 streams
//! (`seed` selects the key, the stream id selects the rollout or trial)
//! with Gaussians produced by Box–Muller from explicitly constructed
//! 53-bit uniforms. Trials derive their streams from the trial index, so
//! results are identical across runs and thread counts.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::diagnostics::{auc, SpanRecord};
use crate::error::{Result, ShearError};
use crate::model::{HiddenStateMatrix, Rollout, RolloutGroup, Span, SpanConfig};
use crate::spans::{decompose, span_cloud};
use crate::transport::{exact_w1_capped, sinkhorn, PointCloud, SinkhornConfig, DEFAULT_MATCHING_CAP};

/// Default hidden dimension for verification runs.
pub const DEFAULT_DIMENSION: usize = 8;
/// Default span length `n` for verification runs.
pub const DEFAULT_SPAN_LENGTH: usize = 100;
/// Default support radius `M` of the clip ball.
pub const DEFAULT_SUPPORT_RADIUS: f64 = 10.0;
/// Default rollout-group size.
pub const DEFAULT_GROUP_SIZE: usize = 8;
/// Default horizon (tokens per rollout) for scenario construction.
pub const DEFAULT_HORIZON: usize = 400;
/// Default Monte-Carlo trial count for experiment runners.
pub const DEFAULT_TRIALS: usize = 200;
/// Shift magnitudes for the discrimination ladder, from the null up to a
/// strong mean shift.
pub const DEFAULT_SHIFT_LADDER: [f64; 5] = [0.0, 0.75, 1.5, 3.0, 6.0];

/// Trials used for the internal noise-floor estimate inside experiment
/// runners.
const NOISE_FLOOR_TRIALS: usize = 96;
/// Points per draw for population-gap estimates inside experiment
/// runners; stays within the exact-matching cap.
const GAP_DRAW_POINTS: usize = 384;
/// Rejection attempts per token before falling back to radial projection.
const MAX_REJECTION_ATTEMPTS: usize = 100;
/// Stream spacing between trials, leaving room for per-rollout streams.
const TRIAL_STREAM_STRIDE: u64 = 1 << 10;

const SEED_GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Distinct deterministic seed for an estimator embedded in a larger run.
fn derive_seed(seed: u64, salt: u64) -> u64 {
    seed.wrapping_add(salt.wrapping_mul(SEED_GOLDEN))
}

/// One sampling regime: an isotropic Gaussian with the given mean and
/// scale, clipped to the ball of radius `support_radius`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RegimeSpec {
    pub mean: Vec<f64>,
    pub covariance_scale: f64,
    pub support_radius: f64,
}

impl RegimeSpec {
    pub fn isotropic(mean: Vec<f64>, covariance_scale: f64, support_radius: f64) -> Self {
        Self {
            mean,
            covariance_scale,
            support_radius,
        }
    }

    fn validate(&self, d: usize, what: &str) -> Result<()> {
        if self.mean.len() != d {
            return Err(ShearError::Config(format!(
                "{what} regime mean has dimension {}, expected {d}",
                self.mean.len()
            )));
        }
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(ShearError::Config(format!(
                "{what} regime mean must be finite"
            )));
        }
        if !(self.covariance_scale.is_finite() && self.covariance_scale > 0.0) {
            return Err(ShearError::Config(format!(
                "{what} regime covariance scale must be positive, got {}",
                self.covariance_scale
            )));
        }
        if !(self.support_radius.is_finite() && self.support_radius > 0.0) {
            return Err(ShearError::Config(format!(
                "{what} regime support radius must be positive, got {}",
                self.support_radius
            )));
        }
        Ok(())
    }
}

/// A correct rollout's own divergence: it follows the aligned regime
/// through token `tau` and this regime afterwards. Used by group
/// scenarios where each correct rollout diverges from the incorrect one
/// at a distinct point.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CorrectDivergence {
    pub tau: usize,
    pub regime: RegimeSpec,
}

/// A complete divergence scenario.
///
/// `boundaries` are the interior switch points of the incorrect rollout's
/// regime sequence: tokens `1..=boundaries[0]` are aligned, the next
/// segment is `drifted[0]`, and segments alternate aligned/drifted from
/// there, so `drifted` needs one regime per even-indexed segment. A
/// single boundary is the single-divergence case.
///
/// `correct_divergences`, when nonempty, gives every correct rollout its
/// own divergence point and post-divergence regime (group scenarios);
/// when empty, correct rollouts draw every token from the aligned
/// regime.
///
/// `position_drift`, when present, adds `drift · (t-1)/(T-1)` to every
/// regime mean at token `t`, exercising the position-dependent case.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DivergenceScenario {
    pub aligned: RegimeSpec,
    pub drifted: Vec<RegimeSpec>,
    pub boundaries: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub correct_divergences: Vec<CorrectDivergence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_drift: Option<Vec<f64>>,
}

/// Basis vector times `magnitude` in dimension `d`.
fn axis_mean(d: usize, axis: usize, magnitude: f64) -> Vec<f64> {
    let mut mean = vec![0.0; d];
    mean[axis % d] = magnitude;
    mean
}

impl DivergenceScenario {
    /// Single divergence at `tau`: zero-mean aligned regime, drifted
    /// regime shifted by `shift` along the first axis, unit covariance
    /// scale, default support radius. `shift = 0` is the null scenario.
    pub fn single_shift(d: usize, tau: usize, shift: f64) -> Self {
        Self {
            aligned: RegimeSpec::isotropic(vec![0.0; d], 1.0, DEFAULT_SUPPORT_RADIUS),
            drifted: vec![RegimeSpec::isotropic(
                axis_mean(d, 0, shift),
                1.0,
                DEFAULT_SUPPORT_RADIUS,
            )],
            boundaries: vec![tau],
            correct_divergences: Vec::new(),
            position_drift: None,
        }
    }

    /// Group scenario: the incorrect rollout drifts by `shift` along the
    /// first axis at the latest divergence point, and correct rollout `k`
    /// leaves the aligned regime at `taus[k]` into its own regime shifted
    /// by `shift / 2` along a later axis.
    pub fn group_shift(d: usize, taus: &[usize], shift: f64) -> Result<Self> {
        if taus.is_empty() {
            return Err(ShearError::Config(
                "group scenario needs at least one divergence point".into(),
            ));
        }
        if d < 2 {
            return Err(ShearError::Config(
                "group scenario needs dimension at least 2 for distinct divergence axes".into(),
            ));
        }
        let tau_star = *taus.iter().max().expect("nonempty");
        let correct_divergences = taus
            .iter()
            .enumerate()
            .map(|(k, &tau)| CorrectDivergence {
                tau,
                // Axes 2.. keep every per-rollout regime distinct from
                // both the aligned mean and the drifted axis.
                regime: RegimeSpec::isotropic(
                    axis_mean(d, 1 + k % (d - 1), shift / 2.0),
                    1.0,
                    DEFAULT_SUPPORT_RADIUS,
                ),
            })
            .collect();
        Ok(Self {
            correct_divergences,
            ..Self::single_shift(d, tau_star, shift)
        })
    }

    /// Single divergence plus a slow linear mean drift of total magnitude
    /// `drift_total` along the second axis, with reduced in-regime noise.
    /// The drift separates span populations at different positions, which
    /// makes the correct rollout's post-divergence spans distinguishable
    /// from every incorrect span.
    pub fn drifting_shift(d: usize, tau: usize, shift: f64, drift_total: f64) -> Result<Self> {
        if d < 2 {
            return Err(ShearError::Config(
                "drifting scenario needs dimension at least 2".into(),
            ));
        }
        let mut base = Self::single_shift(d, tau, shift);
        base.aligned.covariance_scale = 0.25;
        base.drifted[0].covariance_scale = 0.25;
        base.position_drift = Some(axis_mean(d, 1, drift_total));
        Ok(base)
    }

    /// Alternating aligned/drifted regimes with the given interior
    /// boundaries; every drifted regime is shifted by `shift` along the
    /// first axis.
    pub fn piecewise_alternating(d: usize, boundaries: Vec<usize>, shift: f64) -> Result<Self> {
        if boundaries.is_empty() {
            return Err(ShearError::Config(
                "piecewise scenario needs at least one boundary".into(),
            ));
        }
        let drifted_count = (boundaries.len() + 1) / 2;
        Ok(Self {
            aligned: RegimeSpec::isotropic(vec![0.0; d], 1.0, DEFAULT_SUPPORT_RADIUS),
            drifted: vec![
                RegimeSpec::isotropic(
                    axis_mean(d, 0, shift),
                    1.0,
                    DEFAULT_SUPPORT_RADIUS
                );
                drifted_count
            ],
            boundaries,
            correct_divergences: Vec::new(),
            position_drift: None,
        })
    }

    /// Support radius shared by every regime (validated equal).
    pub fn support_radius(&self) -> f64 {
        self.aligned.support_radius
    }

    /// Whether the scenario contains an actual distributional divergence:
    /// a drifted or per-rollout regime that differs from the aligned one.
    pub fn diverges(&self) -> bool {
        let differs = |r: &RegimeSpec| {
            r.mean != self.aligned.mean || r.covariance_scale != self.aligned.covariance_scale
        };
        self.drifted.iter().any(differs)
            || self.correct_divergences.iter().any(|c| differs(&c.regime))
    }

    /// Validates the scenario against a hidden dimension and horizon.
    fn validate(&self, d: usize, t_total: usize) -> Result<()> {
        self.aligned.validate(d, "aligned")?;
        for (i, r) in self.drifted.iter().enumerate() {
            r.validate(d, &format!("drifted[{i}]"))?;
            if r.support_radius != self.aligned.support_radius {
                return Err(ShearError::Config(
                    "all regimes must share one support radius".into(),
                ));
            }
        }
        if self.boundaries.is_empty() {
            return Err(ShearError::Config(
                "scenario needs at least one regime boundary".into(),
            ));
        }
        if self.boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ShearError::Config(
                "regime boundaries must be strictly increasing".into(),
            ));
        }
        if self.boundaries[0] == 0 {
            return Err(ShearError::Config(
                "regime boundaries are 1-based token indices; 0 is not a boundary".into(),
            ));
        }
        let last = *self.boundaries.last().expect("nonempty");
        if last >= t_total {
            return Err(ShearError::Config(format!(
                "divergence point {last} must lie strictly before the horizon {t_total}"
            )));
        }
        let expected_drifted = (self.boundaries.len() + 1) / 2;
        if self.drifted.len() != expected_drifted {
            return Err(ShearError::Config(format!(
                "{} boundaries need {} drifted regime(s), got {}",
                self.boundaries.len(),
                expected_drifted,
                self.drifted.len()
            )));
        }
        if !self.correct_divergences.is_empty() {
            if self.boundaries.len() != 1 {
                return Err(ShearError::Config(
                    "per-rollout divergences require a single-boundary scenario".into(),
                ));
            }
            for (k, c) in self.correct_divergences.iter().enumerate() {
                c.regime.validate(d, &format!("correct_divergences[{k}]"))?;
                if c.regime.support_radius != self.aligned.support_radius {
                    return Err(ShearError::Config(
                        "all regimes must share one support radius".into(),
                    ));
                }
                if c.tau == 0 || c.tau >= t_total {
                    return Err(ShearError::Config(format!(
                        "correct divergence point {} must lie in [1, {})",
                        c.tau, t_total
                    )));
                }
                if c.tau > self.boundaries[0] {
                    return Err(ShearError::Config(format!(
                        "correct divergence point {} exceeds the incorrect rollout's \
                         divergence point {}",
                        c.tau, self.boundaries[0]
                    )));
                }
            }
        }
        if let Some(drift) = &self.position_drift {
            if drift.len() != d {
                return Err(ShearError::Config(format!(
                    "position drift has dimension {}, expected {d}",
                    drift.len()
                )));
            }
            if drift.iter().any(|v| !v.is_finite()) {
                return Err(ShearError::Config("position drift must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Which regime chain a sampled rollout follows.
#[derive(Clone, Copy)]
enum SampleRole<'a> {
    /// Correct rollout, optionally with its own divergence.
    Correct(Option<&'a CorrectDivergence>),
    /// Incorrect rollout following the boundary sequence.
    Incorrect,
}

/// Regime governing token `t` (1-based) for the given role.
fn regime_for<'a>(
    scenario: &'a DivergenceScenario,
    role: SampleRole<'a>,
    t: usize,
) -> &'a RegimeSpec {
    match role {
        SampleRole::Correct(None) => &scenario.aligned,
        SampleRole::Correct(Some(div)) => {
            if t <= div.tau {
                &scenario.aligned
            } else {
                &div.regime
            }
        }
        SampleRole::Incorrect => {
            // Segment index: tokens in (boundaries[i-1], boundaries[i]]
            // belong to segment i; even segments are aligned.
            let segment = scenario.boundaries.partition_point(|&b| b < t);
            if segment % 2 == 0 {
                &scenario.aligned
            } else {
                &scenario.drifted[segment / 2]
            }
        }
    }
}

/// Uniform in the open interval (0, 1) from the high 53 bits, never
/// exactly 0 or 1 so logarithms stay finite.
fn unit_open(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Fills `out` with standard normals via Box–Muller pairs.
fn standard_normals(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let mut i = 0;
    while i < out.len() {
        let u1 = unit_open(rng.next_u64());
        let u2 = unit_open(rng.next_u64());
        let radius = (-2.0 * u1.ln()).sqrt();
        let (sin, cos) = (std::f64::consts::TAU * u2).sin_cos();
        out[i] = radius * cos;
        i += 1;
        if i < out.len() {
            out[i] = radius * sin;
            i += 1;
        }
    }
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Casts a candidate to f32 while keeping the f32-measured norm at or
/// below `m` exactly; rounding during the cast can push a boundary point
/// outside the ball, so shrink and re-check until it holds.
fn cast_within_ball(candidate: &[f64], m: f64) -> Vec<f32> {
    let mut out: Vec<f32> = candidate.iter().map(|&x| x as f32).collect();
    loop {
        let norm = out.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
        if norm <= m {
            return out;
        }
        let factor = m / norm * (1.0 - 1e-6);
        for x in &mut out {
            *x = ((*x as f64) * factor) as f32;
        }
    }
}

/// Draws one token: isotropic Gaussian around `mean`, rejection-sampled
/// into the ball of radius `m` with radial projection as the fallback.
fn sample_token(rng: &mut ChaCha8Rng, mean: &[f64], scale: f64, m: f64) -> Vec<f32> {
    let d = mean.len();
    let mut z = vec![0.0; d];
    let mut candidate = vec![0.0; d];
    for _ in 0..MAX_REJECTION_ATTEMPTS {
        standard_normals(rng, &mut z);
        for i in 0..d {
            candidate[i] = mean[i] + scale * z[i];
        }
        if l2_norm(&candidate) <= m {
            return cast_within_ball(&candidate, m);
        }
    }
    let norm = l2_norm(&candidate);
    let factor = m / norm;
    for x in &mut candidate {
        *x *= factor;
    }
    cast_within_ball(&candidate, m)
}

/// Effective mean at token `t`: the regime mean plus the scenario's
/// linear position drift scaled by `(t-1)/(t_total-1)`.
fn effective_mean(scenario: &DivergenceScenario, regime: &RegimeSpec, t: usize, t_total: usize) -> Vec<f64> {
    match &scenario.position_drift {
        None => regime.mean.clone(),
        Some(drift) => {
            let frac = if t_total > 1 {
                (t - 1) as f64 / (t_total - 1) as f64
            } else {
                0.0
            };
            regime
                .mean
                .iter()
                .zip(drift)
                .map(|(mu, v)| mu + v * frac)
                .collect()
        }
    }
}

/// Samples the hidden states of one rollout on its own generator stream.
fn sample_hidden(
    scenario: &DivergenceScenario,
    role: SampleRole<'_>,
    t_total: usize,
    d: usize,
    rng: &mut ChaCha8Rng,
) -> Result<HiddenStateMatrix> {
    let m = scenario.support_radius();
    let mut data = Vec::with_capacity(t_total * d);
    for t in 1..=t_total {
        let regime = regime_for(scenario, role, t);
        let mean = effective_mean(scenario, regime, t, t_total);
        data.extend_from_slice(&sample_token(rng, &mean, regime.covariance_scale, m));
    }
    HiddenStateMatrix::new(data, t_total, d)
}

/// Samples a rollout group: the first `correct_count` rollouts are
/// correct (reward 1), the rest incorrect (reward 0). Deterministic per
/// `(scenario, seed)` — see the module docs for the stream layout.
///
/// When the scenario carries per-rollout divergences, their count must
/// equal `correct_count`; correct rollout `k` then follows its own
/// divergence. Otherwise correct rollouts draw every token from the
/// aligned regime.
pub fn sample_rollout_group(
    scenario: &DivergenceScenario,
    g: usize,
    correct_count: usize,
    t_total: usize,
    d: usize,
    seed: u64,
) -> Result<RolloutGroup> {
    sample_rollout_group_stream(scenario, g, correct_count, t_total, d, seed, 0)
}

/// [`sample_rollout_group`] with an explicit base stream id; rollout `i`
/// samples on stream `stream_base + i`. Trial loops space their bases so
/// no two trials share a stream.
pub fn sample_rollout_group_stream(
    scenario: &DivergenceScenario,
    g: usize,
    correct_count: usize,
    t_total: usize,
    d: usize,
    seed: u64,
    stream_base: u64,
) -> Result<RolloutGroup> {
    scenario.validate(d, t_total)?;
    if correct_count > g {
        return Err(ShearError::Config(format!(
            "correct count {correct_count} exceeds group size {g}"
        )));
    }
    if !scenario.correct_divergences.is_empty()
        && scenario.correct_divergences.len() != correct_count
    {
        return Err(ShearError::Config(format!(
            "scenario has {} per-rollout divergences but the group has {} correct rollouts",
            scenario.correct_divergences.len(),
            correct_count
        )));
    }
    let mut rollouts = Vec::with_capacity(g);
    for i in 0..g {
        let role = if i < correct_count {
            SampleRole::Correct(scenario.correct_divergences.get(i))
        } else {
            SampleRole::Incorrect
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_base + i as u64);
        let hidden = sample_hidden(scenario, role, t_total, d, &mut rng)?;
        rollouts.push(Rollout {
            id: format!("r{i}"),
            reward: i < correct_count,
            hidden,
        });
    }
    RolloutGroup::new("sim".to_string(), rollouts)
}

/// Ground-truth drift labels for the group [`sample_rollout_group`] builds
/// from the same arguments: `labels[i][t-1]` is true when token `t` of
/// rollout `i` is governed by a regime other than the aligned one. For an
/// incorrect rollout that is every odd segment of the boundary sequence;
/// for a correct rollout it is the tokens past its own divergence point
/// (when the scenario has per-rollout divergences, otherwise never).
/// Position drift moves aligned and drifted means alike, so it does not
/// affect labels.
pub fn drift_labels(
    scenario: &DivergenceScenario,
    g: usize,
    correct_count: usize,
    t_total: usize,
) -> Result<Vec<Vec<bool>>> {
    if correct_count > g {
        return Err(ShearError::Config(format!(
            "correct count {correct_count} exceeds group size {g}"
        )));
    }
    if !scenario.correct_divergences.is_empty()
        && scenario.correct_divergences.len() != correct_count
    {
        return Err(ShearError::Config(format!(
            "scenario has {} per-rollout divergences but the group has {} correct rollouts",
            scenario.correct_divergences.len(),
            correct_count
        )));
    }
    let labels = (0..g)
        .map(|i| {
            let divergence = if i < correct_count {
                Some(scenario.correct_divergences.get(i))
            } else {
                None
            };
            (1..=t_total)
                .map(|t| match divergence {
                    Some(None) => false,
                    Some(Some(div)) => t > div.tau,
                    None => scenario.boundaries.partition_point(|&b| b < t) % 2 == 1,
                })
                .collect()
        })
        .collect();
    Ok(labels)
}

/// An n-point empirical draw from one span of a role's regime chain: one
/// token per position, matching how real span clouds arise.
fn span_draw(
    scenario: &DivergenceScenario,
    role: SampleRole<'_>,
    span: Span,
    t_total: usize,
    rng: &mut ChaCha8Rng,
) -> PointCloud {
    let rows: Vec<Vec<f64>> = (span.a..=span.b)
        .map(|t| {
            let regime = regime_for(scenario, role, t);
            let mean = effective_mean(scenario, regime, t, t_total);
            sample_token(rng, &mean, regime.covariance_scale, scenario.support_radius())
                .iter()
                .map(|&x| x as f64)
                .collect()
        })
        .collect();
    PointCloud::from_rows(&rows).expect("sampled rows are finite and non-empty")
}

/// A large draw from a span's population mixture: positions sampled
/// uniformly over the span, one token each.
fn span_mixture_draw(
    scenario: &DivergenceScenario,
    role: SampleRole<'_>,
    span: Span,
    t_total: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> PointCloud {
    let len = span.len() as u64;
    let rows: Vec<Vec<f64>> = (0..count)
        .map(|_| {
            let t = span.a + (rng.next_u64() % len) as usize;
            let regime = regime_for(scenario, role, t);
            let mean = effective_mean(scenario, regime, t, t_total);
            sample_token(rng, &mean, regime.covariance_scale, scenario.support_radius())
                .iter()
                .map(|&x| x as f64)
                .collect()
        })
        .collect();
    PointCloud::from_rows(&rows).expect("sampled rows are finite and non-empty")
}

/// An n-point iid draw from a single static regime.
fn regime_draw(regime: &RegimeSpec, n: usize, rng: &mut ChaCha8Rng) -> PointCloud {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            sample_token(rng, &regime.mean, regime.covariance_scale, regime.support_radius)
                .iter()
                .map(|&x| x as f64)
                .collect()
        })
        .collect();
    PointCloud::from_rows(&rows).expect("sampled rows are finite and non-empty")
}

/// Wasserstein-1 between two clouds: exact matching when the replication
/// cap allows it, entropic approximation with a small regularizer
/// otherwise.
fn w1_distance(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    match exact_w1_capped(p, q, DEFAULT_MATCHING_CAP) {
        Ok(v) => Ok(v),
        Err(ShearError::Capacity(_)) => {
            let cfg = SinkhornConfig {
                epsilon: 0.05,
                max_iterations: 20_000,
                marginal_tolerance: 1e-6,
            };
            Ok(sinkhorn(p, q, &cfg)?.value)
        }
        Err(e) => Err(e),
    }
}

/// Empirical estimate of the finite-sample noise floor.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct NoiseFloorEstimate {
    pub eta_hat: f64,
    pub n: usize,
    pub d: usize,
    pub trials: usize,
    pub std_error: f64,
}

fn summarize_noise(distances: &[f64], n: usize, d: usize) -> NoiseFloorEstimate {
    let trials = distances.len();
    let eta_hat = distances.iter().sum::<f64>() / trials as f64;
    let var = distances
        .iter()
        .map(|x| (x - eta_hat).powi(2))
        .sum::<f64>()
        / (trials - 1) as f64;
    NoiseFloorEstimate {
        eta_hat,
        n,
        d,
        trials,
        std_error: (var / trials as f64).sqrt(),
    }
}

/// Monte-Carlo mean Wasserstein-1 distance between two independent
/// n-point draws from the same regime: the operational noise floor
/// `eta_hat` for spans of length `n` in dimension `d`.
pub fn estimate_noise_floor(
    regime: &RegimeSpec,
    n: usize,
    d: usize,
    trials: usize,
    seed: u64,
) -> Result<NoiseFloorEstimate> {
    regime.validate(d, "noise floor")?;
    if n == 0 {
        return Err(ShearError::Config("span length must be positive".into()));
    }
    if trials < 2 {
        return Err(ShearError::Config(
            "noise-floor estimation needs at least two trials".into(),
        ));
    }
    let distances: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let a = regime_draw(regime, n, &mut rng);
            let b = regime_draw(regime, n, &mut rng);
            w1_distance(&a, &b)
        })
        .collect::<Result<_>>()?;
    Ok(summarize_noise(&distances, n, d))
}

/// Noise floor of one span's population mixture under a role's regime
/// chain: mean distance between two independent per-position draws.
/// Coincides with [`estimate_noise_floor`] on the span's regime when the
/// chain is homogeneous over the span and there is no position drift.
fn span_noise_floor(
    scenario: &DivergenceScenario,
    role: SampleRole<'_>,
    span: Span,
    t_total: usize,
    trials: usize,
    seed: u64,
) -> Result<NoiseFloorEstimate> {
    let d = scenario.aligned.mean.len();
    let distances: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let a = span_draw(scenario, role, span, t_total, &mut rng);
            let b = span_draw(scenario, role, span, t_total, &mut rng);
            w1_distance(&a, &b)
        })
        .collect::<Result<_>>()?;
    Ok(summarize_noise(&distances, span.len(), d))
}

/// Consistent estimate of the population gap between two regimes: the
/// distance between one large empirical draw from each.
pub fn estimate_population_gap(
    aligned: &RegimeSpec,
    drifted: &RegimeSpec,
    n_large: usize,
    seed: u64,
) -> Result<f64> {
    let d = aligned.mean.len();
    aligned.validate(d, "aligned")?;
    drifted.validate(d, "drifted")?;
    if n_large == 0 {
        return Err(ShearError::Config("draw size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let a = regime_draw(aligned, n_large, &mut rng);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let b = regime_draw(drifted, n_large, &mut rng);
    w1_distance(&a, &b)
}

/// Population gap between two span mixtures (role/span pairs), via one
/// large draw from each.
fn span_population_gap(
    scenario: &DivergenceScenario,
    role_a: SampleRole<'_>,
    span_a: Span,
    role_b: SampleRole<'_>,
    span_b: Span,
    t_total: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let a = span_mixture_draw(scenario, role_a, span_a, t_total, GAP_DRAW_POINTS, &mut rng);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let b = span_mixture_draw(scenario, role_b, span_b, t_total, GAP_DRAW_POINTS, &mut rng);
    w1_distance(&a, &b)
}

/// Outcome of a separation experiment: pre/post distance means, the
/// population-gap and noise-floor estimates they are compared against,
/// the discrimination AUC between the two distance populations, and
/// whether the theorem's separation condition `D̂ > 2η̂` held. The
/// per-trial distances back the CSV trial rows.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SeparationReport {
    pub mean_pre: f64,
    pub mean_post: f64,
    pub d_hat: f64,
    pub eta_hat: f64,
    pub auc: f64,
    pub trials: usize,
    pub condition_met: bool,
    pub pre_distances: Vec<f64>,
    pub post_distances: Vec<f64>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn build_report(
    pre: Vec<f64>,
    post: Vec<f64>,
    d_hat: f64,
    eta_hat: f64,
    trials: usize,
) -> Result<SeparationReport> {
    let discrimination = auc(&post, &pre)?;
    Ok(SeparationReport {
        mean_pre: mean(&pre),
        mean_post: mean(&post),
        d_hat,
        eta_hat,
        auc: discrimination,
        trials,
        condition_met: d_hat > 2.0 * eta_hat,
        pre_distances: pre,
        post_distances: post,
    })
}

/// Shared validation for single-divergence experiment runners.
fn single_divergence_spans(
    scenario: &DivergenceScenario,
    n: usize,
    trials: usize,
) -> Result<(usize, Span, Span)> {
    if trials == 0 {
        return Err(ShearError::Config("experiments need at least one trial".into()));
    }
    if n == 0 {
        return Err(ShearError::Config("span length must be positive".into()));
    }
    if scenario.boundaries.len() != 1 {
        return Err(ShearError::Config(
            "pairwise experiments need a single divergence point".into(),
        ));
    }
    let tau = scenario.boundaries[0];
    if tau < n {
        return Err(ShearError::Config(format!(
            "divergence point {tau} leaves no room for a fully pre-divergence span of length {n}"
        )));
    }
    let pre = Span {
        a: tau + 1 - n,
        b: tau,
    };
    let post = Span {
        a: tau + 1,
        b: tau + n,
    };
    Ok((tau, pre, post))
}

/// Pairwise separation experiment: over `trials` correct/incorrect pairs,
/// measures the span distance between the corresponding pre-divergence
/// spans (ending at the divergence point) and post-divergence spans
/// (starting just after it).
pub fn run_pairwise_separation(
    scenario: &DivergenceScenario,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<SeparationReport> {
    if !scenario.correct_divergences.is_empty() {
        return Err(ShearError::Config(
            "pairwise experiments use scenarios without per-rollout divergences".into(),
        ));
    }
    let (tau, pre, post) = single_divergence_spans(scenario, n, trials)?;
    let d = scenario.aligned.mean.len();
    let t_total = tau + n;
    let outcomes: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let group = sample_rollout_group_stream(
                scenario,
                2,
                1,
                t_total,
                d,
                seed,
                i as u64 * TRIAL_STREAM_STRIDE,
            )?;
            let correct = &group.rollouts()[0].hidden;
            let incorrect = &group.rollouts()[1].hidden;
            let d_pre = w1_distance(&span_cloud(incorrect, &pre)?, &span_cloud(correct, &pre)?)?;
            let d_post = w1_distance(&span_cloud(incorrect, &post)?, &span_cloud(correct, &post)?)?;
            Ok((d_pre, d_post))
        })
        .collect::<Result<_>>()?;
    let eta = span_noise_floor(
        scenario,
        SampleRole::Correct(None),
        pre,
        t_total,
        NOISE_FLOOR_TRIALS,
        derive_seed(seed, 1),
    )?;
    let d_hat = span_population_gap(
        scenario,
        SampleRole::Correct(None),
        post,
        SampleRole::Incorrect,
        post,
        t_total,
        derive_seed(seed, 2),
    )?;
    let (pre_d, post_d) = outcomes.into_iter().unzip();
    build_report(pre_d, post_d, d_hat, eta.eta_hat, trials)
}

/// Group separation experiment: each trial samples one incorrect rollout
/// and `K⁺` correct rollouts with their own divergence points, then
/// evaluates every disjoint span of the incorrect rollout by its minimum
/// distance over all correct rollouts and spans. Spans ending at or
/// before the latest divergence point form the pre population, the span
/// after it the post population; `d_hat` is the minimum population gap
/// over all opposing (rollout, span) pairs.
pub fn run_group_separation(
    scenario: &DivergenceScenario,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<SeparationReport> {
    if trials == 0 {
        return Err(ShearError::Config("experiments need at least one trial".into()));
    }
    if n == 0 {
        return Err(ShearError::Config("span length must be positive".into()));
    }
    let kplus = scenario.correct_divergences.len();
    if kplus < 2 {
        return Err(ShearError::Config(
            "group experiments need at least two correct rollouts with divergence points".into(),
        ));
    }
    if scenario.boundaries.len() != 1 {
        return Err(ShearError::Config(
            "group experiments need a single incorrect divergence point".into(),
        ));
    }
    let tau_star = scenario.boundaries[0];
    let latest = scenario
        .correct_divergences
        .iter()
        .map(|c| c.tau)
        .max()
        .expect("nonempty");
    if latest != tau_star {
        return Err(ShearError::Config(format!(
            "the incorrect rollout must drift at the latest divergence point \
             ({latest}), got boundary {tau_star}"
        )));
    }
    if tau_star % n != 0 {
        return Err(ShearError::Config(format!(
            "latest divergence point {tau_star} must be a multiple of the span length {n} \
             so spans do not straddle it"
        )));
    }
    let d = scenario.aligned.mean.len();
    let t_total = tau_star + n;
    let grid = decompose(t_total, &SpanConfig::new(n, n)?);
    let outcomes: Vec<(Vec<f64>, f64)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let group = sample_rollout_group_stream(
                scenario,
                kplus + 1,
                kplus,
                t_total,
                d,
                seed,
                i as u64 * TRIAL_STREAM_STRIDE,
            )?;
            let incorrect = &group.rollouts()[kplus].hidden;
            let correct_clouds: Vec<Vec<PointCloud>> = group.rollouts()[..kplus]
                .iter()
                .map(|r| {
                    grid.iter()
                        .map(|s| span_cloud(&r.hidden, s))
                        .collect::<Result<_>>()
                })
                .collect::<Result<_>>()?;
            let mut pre = Vec::new();
            let mut post = 0.0;
            for span in &grid {
                let own = span_cloud(incorrect, span)?;
                let mut d_min = f64::INFINITY;
                for clouds in &correct_clouds {
                    for opposing in clouds {
                        d_min = d_min.min(w1_distance(&own, opposing)?);
                    }
                }
                if span.b <= tau_star {
                    pre.push(d_min);
                } else {
                    post = d_min;
                }
            }
            Ok((pre, post))
        })
        .collect::<Result<_>>()?;
    let eta = span_noise_floor(
        scenario,
        SampleRole::Incorrect,
        grid[0],
        t_total,
        NOISE_FLOOR_TRIALS,
        derive_seed(seed, 1),
    )?;
    let post_span = *grid.last().expect("grid is nonempty");
    let mut d_star = f64::INFINITY;
    for k in 0..kplus {
        let role = SampleRole::Correct(Some(&scenario.correct_divergences[k]));
        for (j, span) in grid.iter().enumerate() {
            let gap = span_population_gap(
                scenario,
                SampleRole::Incorrect,
                post_span,
                role,
                *span,
                t_total,
                derive_seed(seed, 2 + (k * grid.len() + j) as u64),
            )?;
            d_star = d_star.min(gap);
        }
    }
    let mut pre_d = Vec::with_capacity(trials * (grid.len() - 1));
    let mut post_d = Vec::with_capacity(trials);
    for (pre, post) in outcomes {
        pre_d.extend(pre);
        post_d.push(post);
    }
    build_report(pre_d, post_d, d_star, eta.eta_hat, trials)
}

/// Symmetric separation experiment: the pairwise setup measured from the
/// correct rollout's perspective. Each of its pre/post spans scores the
/// minimum distance over all disjoint spans of the incorrect rollout;
/// `d_hat` is the minimum population gap from the correct post span to
/// any incorrect span.
pub fn run_symmetric_separation(
    scenario: &DivergenceScenario,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<SeparationReport> {
    if !scenario.correct_divergences.is_empty() {
        return Err(ShearError::Config(
            "symmetric experiments use scenarios without per-rollout divergences".into(),
        ));
    }
    let (tau, pre, post) = single_divergence_spans(scenario, n, trials)?;
    if tau % n != 0 {
        return Err(ShearError::Config(format!(
            "divergence point {tau} must be a multiple of the span length {n} \
             so opposing spans do not straddle it"
        )));
    }
    let d = scenario.aligned.mean.len();
    let t_total = tau + n;
    let grid = decompose(t_total, &SpanConfig::new(n, n)?);
    let outcomes: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let group = sample_rollout_group_stream(
                scenario,
                2,
                1,
                t_total,
                d,
                seed,
                i as u64 * TRIAL_STREAM_STRIDE,
            )?;
            let correct = &group.rollouts()[0].hidden;
            let incorrect = &group.rollouts()[1].hidden;
            let opposing: Vec<PointCloud> = grid
                .iter()
                .map(|s| span_cloud(incorrect, s))
                .collect::<Result<_>>()?;
            let score = |span: &Span| -> Result<f64> {
                let own = span_cloud(correct, span)?;
                let mut best = f64::INFINITY;
                for cloud in &opposing {
                    best = best.min(w1_distance(&own, cloud)?);
                }
                Ok(best)
            };
            Ok((score(&pre)?, score(&post)?))
        })
        .collect::<Result<_>>()?;
    let eta = span_noise_floor(
        scenario,
        SampleRole::Correct(None),
        pre,
        t_total,
        NOISE_FLOOR_TRIALS,
        derive_seed(seed, 1),
    )?;
    let mut d_plus = f64::INFINITY;
    for (j, span) in grid.iter().enumerate() {
        let gap = span_population_gap(
            scenario,
            SampleRole::Correct(None),
            post,
            SampleRole::Incorrect,
            *span,
            t_total,
            derive_seed(seed, 2 + j as u64),
        )?;
        d_plus = d_plus.min(gap);
    }
    let (pre_d, post_d) = outcomes.into_iter().unzip();
    build_report(pre_d, post_d, d_plus, eta.eta_hat, trials)
}

/// Per-regime-class distance summary for piecewise scenarios.
///
/// `drifted_means` and `d_hats` align with the scenario's drifted regime
/// list; `straddle_mean` is absent when no span crosses a boundary.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PiecewiseReport {
    pub aligned_mean: f64,
    pub drifted_means: Vec<f64>,
    pub straddle_mean: Option<f64>,
    pub eta_hat: f64,
    pub d_hats: Vec<f64>,
    pub trials: usize,
    pub aligned_spans: usize,
    pub drifted_spans: usize,
    pub straddle_spans: usize,
    pub span_means: Vec<f64>,
}

/// Classification of one grid span against the regime segments.
#[derive(Clone, Copy, PartialEq)]
enum SpanClass {
    Aligned,
    Drifted(usize),
    Straddle,
}

/// Piecewise separation experiment: rollout pairs over an alternating
/// regime sequence, with every grid span (stride `n/2`) scored against
/// the corresponding span of the correct rollout and summarized by
/// regime class. Every regime segment must be at least `n` tokens long.
pub fn run_piecewise(
    scenario: &DivergenceScenario,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<PiecewiseReport> {
    if trials == 0 {
        return Err(ShearError::Config("experiments need at least one trial".into()));
    }
    if n == 0 {
        return Err(ShearError::Config("span length must be positive".into()));
    }
    if !scenario.correct_divergences.is_empty() {
        return Err(ShearError::Config(
            "piecewise experiments use scenarios without per-rollout divergences".into(),
        ));
    }
    if scenario.position_drift.is_some() {
        return Err(ShearError::Config(
            "piecewise experiments assume position-homogeneous regimes".into(),
        ));
    }
    let d = scenario.aligned.mean.len();
    let last = *scenario
        .boundaries
        .last()
        .ok_or_else(|| ShearError::Config("scenario needs at least one regime boundary".into()))?;
    let t_total = last + n;
    // Segment of token t: boundaries passed before t.
    let segment_of = |t: usize| scenario.boundaries.partition_point(|&b| b < t);
    let mut prev = 0;
    for (i, &b) in scenario.boundaries.iter().enumerate() {
        if b - prev < n {
            return Err(ShearError::Config(format!(
                "regime segment {i} has {} tokens, need at least the span length {n}",
                b - prev
            )));
        }
        prev = b;
    }
    let stride = (n / 2).max(1);
    let grid = decompose(t_total, &SpanConfig::new(n, stride)?);
    let classes: Vec<SpanClass> = grid
        .iter()
        .map(|s| {
            let seg = segment_of(s.a);
            if seg != segment_of(s.b) {
                SpanClass::Straddle
            } else if seg % 2 == 0 {
                SpanClass::Aligned
            } else {
                SpanClass::Drifted(seg / 2)
            }
        })
        .collect();
    let per_trial: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let group = sample_rollout_group_stream(
                scenario,
                2,
                1,
                t_total,
                d,
                seed,
                i as u64 * TRIAL_STREAM_STRIDE,
            )?;
            let correct = &group.rollouts()[0].hidden;
            let incorrect = &group.rollouts()[1].hidden;
            grid.iter()
                .map(|s| w1_distance(&span_cloud(incorrect, s)?, &span_cloud(correct, s)?))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let span_means: Vec<f64> = (0..grid.len())
        .map(|j| per_trial.iter().map(|row| row[j]).sum::<f64>() / trials as f64)
        .collect();
    let class_mean = |class: SpanClass| {
        let values: Vec<f64> = classes
            .iter()
            .zip(&span_means)
            .filter(|(c, _)| **c == class)
            .map(|(_, m)| *m)
            .collect();
        if values.is_empty() {
            None
        } else {
            Some(mean(&values))
        }
    };
    let aligned_mean = class_mean(SpanClass::Aligned).ok_or_else(|| {
        ShearError::Config("piecewise grid contains no aligned-contained span".into())
    })?;
    let drifted_means: Vec<f64> = (0..scenario.drifted.len())
        .map(|r| {
            class_mean(SpanClass::Drifted(r)).ok_or_else(|| {
                ShearError::Config(format!(
                    "piecewise grid contains no span inside drifted regime {r}"
                ))
            })
        })
        .collect::<Result<_>>()?;
    let straddle_mean = class_mean(SpanClass::Straddle);
    let eta = span_noise_floor(
        scenario,
        SampleRole::Incorrect,
        grid[0],
        t_total,
        NOISE_FLOOR_TRIALS,
        derive_seed(seed, 1),
    )?;
    let d_hats: Vec<f64> = scenario
        .drifted
        .iter()
        .enumerate()
        .map(|(r, regime)| {
            estimate_population_gap(
                &scenario.aligned,
                regime,
                GAP_DRAW_POINTS,
                derive_seed(seed, 2 + r as u64),
            )
        })
        .collect::<Result<_>>()?;
    let count = |class: SpanClass| classes.iter().filter(|c| **c == class).count();
    Ok(PiecewiseReport {
        aligned_mean,
        straddle_mean,
        eta_hat: eta.eta_hat,
        trials,
        aligned_spans: count(SpanClass::Aligned),
        drifted_spans: classes
            .iter()
            .filter(|c| matches!(c, SpanClass::Drifted(_)))
            .count(),
        straddle_spans: count(SpanClass::Straddle),
        drifted_means,
        d_hats,
        span_means,
    })
}

/// Empirical check of the Wasserstein concentration tail.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ConcentrationReport {
    /// Fraction of trials exceeding the empirical mean by more than `u`.
    pub frequency: f64,
    /// The theoretical tail bound `exp(-n u² / 2M²)`.
    pub bound: f64,
    /// Binomial standard error of a frequency at the bound's level.
    pub std_error: f64,
    pub mean_distance: f64,
    pub exceedances: usize,
    pub trials: usize,
    pub deviation: f64,
}

/// Measures how often the distance between an n-point draw and a fixed
/// reference draw (4n points from the same regime) exceeds its own
/// empirical mean by more than `u`, against the tail bound
/// `exp(-n u² / 2M²)`.
pub fn concentration_check(
    regime: &RegimeSpec,
    n: usize,
    d: usize,
    trials: usize,
    u: f64,
    seed: u64,
) -> Result<ConcentrationReport> {
    regime.validate(d, "concentration")?;
    if n == 0 {
        return Err(ShearError::Config("span length must be positive".into()));
    }
    if trials < 2 {
        return Err(ShearError::Config(
            "concentration check needs at least two trials".into(),
        ));
    }
    if !u.is_finite() || u < 0.0 {
        return Err(ShearError::Config(format!(
            "deviation must be finite and nonnegative, got {u}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let reference = regime_draw(regime, 4 * n, &mut rng);
    let distances: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1 + i as u64);
            let draw = regime_draw(regime, n, &mut rng);
            w1_distance(&draw, &reference)
        })
        .collect::<Result<_>>()?;
    let mean_distance = mean(&distances);
    let exceedances = distances.iter().filter(|&&x| x > mean_distance + u).count();
    let m = regime.support_radius;
    let bound = (-(n as f64) * u * u / (2.0 * m * m)).exp();
    Ok(ConcentrationReport {
        frequency: exceedances as f64 / trials as f64,
        bound,
        std_error: (bound * (1.0 - bound) / trials as f64).sqrt(),
        mean_distance,
        exceedances,
        trials,
        deviation: u,
    })
}

/// Samples span records for stratified diagnostics: `trials` pairs from a
/// single-divergence scenario, each disjoint span of each rollout scored
/// by its minimum distance to the opposing rollout's spans. Quality is
/// the simulated continuation success: 1 everywhere except the incorrect
/// rollout's post-divergence spans when the scenario actually diverges.
pub fn collect_span_records(
    scenario: &DivergenceScenario,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<SpanRecord>> {
    if !scenario.correct_divergences.is_empty() {
        return Err(ShearError::Config(
            "span-record collection uses scenarios without per-rollout divergences".into(),
        ));
    }
    let (tau, _, _) = single_divergence_spans(scenario, n, trials)?;
    if tau % n != 0 {
        return Err(ShearError::Config(format!(
            "divergence point {tau} must be a multiple of the span length {n} \
             so spans do not straddle it"
        )));
    }
    let d = scenario.aligned.mean.len();
    let t_total = tau + n;
    let grid = decompose(t_total, &SpanConfig::new(n, n)?);
    let diverges = scenario.diverges();
    let per_trial: Vec<Vec<SpanRecord>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let group = sample_rollout_group_stream(
                scenario,
                2,
                1,
                t_total,
                d,
                seed,
                i as u64 * TRIAL_STREAM_STRIDE,
            )?;
            let mut records = Vec::with_capacity(2 * grid.len());
            for (own_idx, other_idx) in [(0usize, 1usize), (1, 0)] {
                let own = &group.rollouts()[own_idx];
                let other = &group.rollouts()[other_idx].hidden;
                let opposing: Vec<PointCloud> = grid
                    .iter()
                    .map(|s| span_cloud(other, s))
                    .collect::<Result<_>>()?;
                for span in &grid {
                    let cloud = span_cloud(&own.hidden, span)?;
                    let mut best = f64::INFINITY;
                    for cl in &opposing {
                        best = best.min(w1_distance(&cloud, cl)?);
                    }
                    let quality = if !own.reward && diverges && span.a > tau {
                        0.0
                    } else {
                        1.0
                    };
                    records.push(SpanRecord {
                        distance: best,
                        quality,
                        correct: own.reward,
                    });
                }
            }
            Ok(records)
        })
        .collect::<Result<_>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}
