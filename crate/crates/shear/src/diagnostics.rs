//! Statistical diagnostics over span distances.
//!
//! These analyses sit downstream of the weighting pipeline and the
//! simulator: discrimination scores between correct and incorrect span
//! populations ([`auc`]), rank correlations between quality and distance
//! ([`spearman`]), pairwise span-distance heatmaps for two rollouts
//! ([`distance_heatmap`]), distance-stratified quality reports
//! ([`stratified_report`]), and stride-to-stride delta analysis along a
//! single trajectory ([`delta_tracking`]).
//!
//! Everything here is a pure function over immutable inputs.

use ndarray::Array2;

use crate::error::{Result, ShearError};
use crate::model::Rollout;
use crate::spans::{decompose, span_cloud};
use crate::transport::PointCloud;
use crate::weighting::{span_pair_distance, WeightingConfig};

/// Default number of equal-width distance bins for [`stratified_report`].
pub const DEFAULT_BIN_COUNT: usize = 10;

/// Default quality-change threshold for [`delta_tracking`]: a stride is
/// retained when the quality signal moves by at least one sixteenth.
pub const DEFAULT_DELTA_THRESHOLD: f64 = 0.0625;

fn check_finite(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(ShearError::Validation(format!(
            "{name} must contain only finite values"
        )));
    }
    Ok(())
}

/// Average ranks (1-based) of `values`; tied entries share the mean of the
/// ranks they occupy.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j hold ranks i+1..=j+1; ties share the mean.
        let shared = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Probability that a randomly drawn positive score exceeds a randomly
/// drawn negative score, counting ties as one half (the Mann–Whitney
/// formulation, computed from average ranks).
///
/// Returns a validation error when either list is empty or contains a
/// non-finite score.
pub fn auc(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(ShearError::Validation(
            "auc needs at least one positive and one negative score".into(),
        ));
    }
    check_finite("auc scores", positives)?;
    check_finite("auc scores", negatives)?;
    let np = positives.len() as f64;
    let nn = negatives.len() as f64;
    let mut combined = Vec::with_capacity(positives.len() + negatives.len());
    combined.extend_from_slice(positives);
    combined.extend_from_slice(negatives);
    let ranks = average_ranks(&combined);
    let positive_rank_sum: f64 = ranks[..positives.len()].iter().sum();
    let u = positive_rank_sum - np * (np + 1.0) / 2.0;
    Ok((u / (np * nn)).clamp(0.0, 1.0))
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(ShearError::Degenerate(
            "correlation is undefined for a constant input vector".into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: the Pearson correlation of average ranks,
/// with ties assigned their average rank.
///
/// Returns a validation error for mismatched or too-short inputs and a
/// degeneracy error when either vector is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(ShearError::Validation(format!(
            "spearman needs equal-length inputs, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(ShearError::Validation(
            "spearman needs at least two observations".into(),
        ));
    }
    check_finite("spearman inputs", x)?;
    check_finite("spearman inputs", y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Pairwise span-distance heatmap between two rollouts.
///
/// Entry `(k, l)` is the configured metric's distance between span `k` of
/// `a` and span `l` of `b`, divided by the mean hidden-state norm over the
/// two rollouts. Operands are passed to the metric in a canonical order
/// keyed on `(rollout id, span index)`, so `distance_heatmap(a, b)` is the
/// exact bitwise transpose of `distance_heatmap(b, a)` even for metrics
/// whose floating-point evaluation is order-sensitive.
pub fn distance_heatmap(a: &Rollout, b: &Rollout, cfg: &WeightingConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    if a.hidden.dim() != b.hidden.dim() {
        return Err(ShearError::DimensionMismatch(format!(
            "heatmap rollouts have hidden dims {} and {}",
            a.hidden.dim(),
            b.hidden.dim()
        )));
    }
    // Accumulate in canonical id order so the transposed call sums the
    // same terms in the same sequence and lands on the same mean bitwise.
    let ordered = if a.id <= b.id { [a, b] } else { [b, a] };
    let mut norm_sum = 0.0f64;
    let mut tokens = 0usize;
    for r in ordered {
        for t in 1..=r.tokens() {
            norm_sum += r.hidden.row_norm(t);
        }
        tokens += r.tokens();
    }
    let mean_norm = norm_sum / tokens as f64;
    if mean_norm == 0.0 {
        return Err(ShearError::Degenerate(
            "heatmap normalization is undefined when every hidden state is zero".into(),
        ));
    }
    let spans_a = decompose(a.tokens(), &cfg.span_cfg);
    let spans_b = decompose(b.tokens(), &cfg.span_cfg);
    let clouds_a: Vec<PointCloud> = spans_a
        .iter()
        .map(|s| span_cloud(&a.hidden, s))
        .collect::<Result<_>>()?;
    let clouds_b: Vec<PointCloud> = spans_b
        .iter()
        .map(|s| span_cloud(&b.hidden, s))
        .collect::<Result<_>>()?;
    let mut out = Array2::zeros((clouds_a.len(), clouds_b.len()));
    for (k, ca) in clouds_a.iter().enumerate() {
        for (l, cb) in clouds_b.iter().enumerate() {
            let a_first = (a.id.as_str(), k) <= (b.id.as_str(), l);
            let pair = if a_first {
                span_pair_distance(ca, cb, cfg)?
            } else {
                span_pair_distance(cb, ca, cfg)?
            };
            out[[k, l]] = pair.distance / mean_norm;
        }
    }
    Ok(out)
}

/// One span observation for [`stratified_report`]: the span's distance to
/// the opposing class, a quality signal in `[0, 1]` (on simulator data the
/// binary pre/post-divergence indicator; ingested data may carry
/// continuation-success estimates), and the rollout-level outcome label.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpanRecord {
    pub distance: f64,
    pub quality: f64,
    pub correct: bool,
}

/// One equal-width distance bin of a [`StratifiedReport`].
///
/// `auc` discriminates the quality scores of correct spans (positives)
/// from incorrect spans (negatives) inside the bin; it is absent when the
/// bin holds a single class. Class quality means are likewise absent for
/// an empty class.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct StratifiedBin {
    pub lo: f64,
    pub hi: f64,
    pub count_correct: usize,
    pub count_incorrect: usize,
    pub auc: Option<f64>,
    pub mean_quality_correct: Option<f64>,
    pub mean_quality_incorrect: Option<f64>,
}

/// Quality discrimination stratified by span distance; bins partition the
/// observed distance range.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct StratifiedReport {
    pub bins: Vec<StratifiedBin>,
}

/// Bins span records into `bin_count` equal-width distance bins and
/// reports per-bin class counts, quality means, and quality AUC.
///
/// With a single bin the report degenerates to the global AUC over all
/// records. When every record has the same distance, all records land in
/// the first bin.
pub fn stratified_report(records: &[SpanRecord], bin_count: usize) -> Result<StratifiedReport> {
    if records.is_empty() {
        return Err(ShearError::Validation(
            "stratified report needs at least one span record".into(),
        ));
    }
    if bin_count == 0 {
        return Err(ShearError::Validation(
            "stratified report needs at least one bin".into(),
        ));
    }
    for r in records {
        if !r.distance.is_finite() {
            return Err(ShearError::Validation(
                "span record distances must be finite".into(),
            ));
        }
        if !r.quality.is_finite() || !(0.0..=1.0).contains(&r.quality) {
            return Err(ShearError::Validation(format!(
                "span record quality {} is outside [0, 1]",
                r.quality
            )));
        }
    }
    let lo = records
        .iter()
        .map(|r| r.distance)
        .fold(f64::INFINITY, f64::min);
    let hi = records
        .iter()
        .map(|r| r.distance)
        .fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let mut members: Vec<Vec<&SpanRecord>> = vec![Vec::new(); bin_count];
    for r in records {
        let idx = if range == 0.0 {
            0
        } else {
            // Scale into [0, bin_count); the maximum lands in the last bin.
            (((r.distance - lo) / range * bin_count as f64) as usize).min(bin_count - 1)
        };
        members[idx].push(r);
    }
    let width = range / bin_count as f64;
    let bins = members
        .iter()
        .enumerate()
        .map(|(i, recs)| {
            let bin_lo = lo + width * i as f64;
            let bin_hi = if i + 1 == bin_count {
                hi
            } else {
                lo + width * (i + 1) as f64
            };
            let correct_q: Vec<f64> = recs
                .iter()
                .filter(|r| r.correct)
                .map(|r| r.quality)
                .collect();
            let incorrect_q: Vec<f64> = recs
                .iter()
                .filter(|r| !r.correct)
                .map(|r| r.quality)
                .collect();
            let mean = |v: &[f64]| {
                if v.is_empty() {
                    None
                } else {
                    Some(v.iter().sum::<f64>() / v.len() as f64)
                }
            };
            let bin_auc = if correct_q.is_empty() || incorrect_q.is_empty() {
                None
            } else {
                Some(auc(&correct_q, &incorrect_q)?)
            };
            Ok(StratifiedBin {
                lo: bin_lo,
                hi: bin_hi,
                count_correct: correct_q.len(),
                count_incorrect: incorrect_q.len(),
                auc: bin_auc,
                mean_quality_correct: mean(&correct_q),
                mean_quality_incorrect: mean(&incorrect_q),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StratifiedReport { bins })
}

/// One step of a quality/distance trajectory for [`delta_tracking`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrajectoryPoint {
    pub position: usize,
    pub quality: f64,
    pub distance: f64,
}

/// A retained stride: the quality and distance change between two
/// consecutive trajectory points.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DeltaPair {
    pub delta_quality: f64,
    pub delta_distance: f64,
}

/// Stride-to-stride deltas with at least `threshold` quality movement,
/// plus the Spearman correlation between retained quality and distance
/// changes (absent when fewer than two strides survive or the retained
/// deltas are constant).
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DeltaReport {
    pub retained: Vec<DeltaPair>,
    pub spearman: Option<f64>,
}

/// Computes consecutive quality/distance differences along a trajectory
/// and keeps the strides whose absolute quality change reaches
/// `threshold`.
pub fn delta_tracking(points: &[TrajectoryPoint], threshold: f64) -> Result<DeltaReport> {
    if points.len() < 2 {
        return Err(ShearError::Validation(
            "delta tracking needs at least two trajectory points".into(),
        ));
    }
    if !threshold.is_finite() || threshold < 0.0 {
        return Err(ShearError::Config(format!(
            "delta threshold must be finite and nonnegative, got {threshold}"
        )));
    }
    for w in points.windows(2) {
        if w[1].position <= w[0].position {
            return Err(ShearError::Validation(
                "trajectory positions must be strictly increasing".into(),
            ));
        }
    }
    for p in points {
        if !p.quality.is_finite() || !p.distance.is_finite() {
            return Err(ShearError::Validation(
                "trajectory qualities and distances must be finite".into(),
            ));
        }
    }
    let retained: Vec<DeltaPair> = points
        .windows(2)
        .filter_map(|w| {
            let delta_quality = w[1].quality - w[0].quality;
            let delta_distance = w[1].distance - w[0].distance;
            (delta_quality.abs() >= threshold).then_some(DeltaPair {
                delta_quality,
                delta_distance,
            })
        })
        .collect();
    let correlation = if retained.len() >= 2 {
        let dq: Vec<f64> = retained.iter().map(|p| p.delta_quality).collect();
        let dd: Vec<f64> = retained.iter().map(|p| p.delta_distance).collect();
        match spearman(&dq, &dd) {
            Ok(rho) => Some(rho),
            Err(ShearError::Degenerate(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(DeltaReport {
        retained,
        spearman: correlation,
    })
}
