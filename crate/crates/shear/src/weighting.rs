//! Token reweighting: groupwise advantages rescaled by span-level
//! divergence from the opposite-outcome rollouts.
//!
//! The pipeline partitions a group by reward, scores every span of every
//! rollout by its minimum distance to any span of any opposing rollout,
//! pools those span distances onto tokens, normalizes by the group's mean
//! hidden-state norm, and multiplies the result into the rollout's
//! group-normalized advantage. Rollouts with no opposing set (a group that
//! is all-correct or all-incorrect) keep unit weights, which reproduces the
//! plain groupwise update bit for bit.

use ndarray::{s, Array2};
use rayon::prelude::*;

use crate::error::{Result, ShearError};
use crate::model::{partition_group, GroupPartition, HiddenStateMatrix, Rollout, RolloutGroup, Span, SpanConfig};
use crate::spans::{decompose, span_cloud, token_cover};
use crate::transport::{
    chamfer_distance, exact_w1_capped, mean_cosine_distance, median_heuristic_bandwidth, mmd_rbf,
    sinkhorn, sinkhorn_from_cost, sinkhorn_sliced, token_cost_grid, DistanceMetric, PointCloud,
    DEFAULT_MATCHING_CAP,
};

/// How covering-span distances are combined into one value per token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingMode {
    /// Token takes the largest distance among spans covering it (the
    /// conservative default: one divergent span is enough to matter).
    Max,
    /// Token takes the mean distance over spans covering it.
    Mean,
}

/// Which scale factor turns pooled span distances into token weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// Divide by the group-wide mean hidden-state norm (the default);
    /// weight magnitudes stay comparable across rollouts in the group.
    CrossRollout,
    /// Rescale each rollout's weights to unit mean, equalizing average
    /// weight magnitude across rollouts.
    PerRollout,
}

/// Which Sinkhorn output feeds the span distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinkhornOutput {
    /// Regularized primal objective (default; the quantity the entropic
    /// sandwich bound is stated for).
    Regularized,
    /// Bare transport cost of the returned plan.
    TransportCost,
}

/// Full configuration of the weighting pipeline. One struct covers every
/// supported variant so ablations differ only in the intended axis.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WeightingConfig {
    pub span_cfg: SpanConfig,
    pub sinkhorn_cfg: crate::transport::SinkhornConfig,
    pub pooling: PoolingMode,
    pub normalization: NormalizationMode,
    pub metric: DistanceMetric,
    /// Guard added to the population standard deviation in the advantage
    /// denominator.
    pub advantage_epsilon: f64,
    /// Fixed RBF bandwidth for the MMD metric; `None` selects the median
    /// heuristic per span pair.
    pub mmd_bandwidth: Option<f64>,
    pub sinkhorn_output: SinkhornOutput,
}

impl Default for WeightingConfig {
    fn default() -> Self {
        Self {
            span_cfg: SpanConfig::default(),
            sinkhorn_cfg: crate::transport::SinkhornConfig::default(),
            pooling: PoolingMode::Max,
            normalization: NormalizationMode::CrossRollout,
            metric: DistanceMetric::Sinkhorn,
            advantage_epsilon: 1e-4,
            mmd_bandwidth: None,
            sinkhorn_output: SinkhornOutput::Regularized,
        }
    }
}

impl WeightingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.advantage_epsilon > 0.0 && self.advantage_epsilon.is_finite()) {
            return Err(ShearError::Config(format!(
                "advantage_epsilon must be positive and finite, got {}",
                self.advantage_epsilon
            )));
        }
        if let Some(bw) = self.mmd_bandwidth {
            if !(bw > 0.0 && bw.is_finite()) {
                return Err(ShearError::Config(format!(
                    "mmd_bandwidth must be positive and finite, got {bw}"
                )));
            }
        }
        SpanConfig::new(self.span_cfg.window, self.span_cfg.stride)?;
        self.sinkhorn_cfg.validate()
    }
}

/// Per-rollout span distance entries; `None` marks rollouts whose opposing
/// set is empty (no distances exist there).
#[derive(Debug, Clone, PartialEq)]
pub struct SpanDistanceTable {
    pub entries: Vec<Option<Vec<f64>>>,
}

impl SpanDistanceTable {
    /// Distance of span `k` (0-based) of rollout `i`, if present.
    pub fn get(&self, rollout: usize, k: usize) -> Option<f64> {
        self.entries
            .get(rollout)
            .and_then(|e| e.as_ref())
            .and_then(|d| d.get(k).copied())
    }
}

/// Group-level normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct GroupNormStats {
    /// Mean Euclidean norm over every token of every rollout.
    pub mean_norm: f64,
    /// Total token count over the group.
    pub total_tokens: usize,
}

/// Final per-token output for one rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenWeightVector {
    /// Rollout-level groupwise advantage.
    pub advantage: f64,
    /// Per-token weights, index 0 holding token 1.
    pub weights: Vec<f64>,
    /// `advantage * weight` per token.
    pub weighted: Vec<f64>,
}

/// One span pair whose Sinkhorn solve stopped at the iteration cap.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct NonConvergedPair {
    pub correct: usize,
    pub incorrect: usize,
    pub correct_span: usize,
    pub incorrect_span: usize,
    pub iterations: usize,
}

/// Group-level accounting for one weighting run.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct GroupWeightReport {
    /// Number of span-pair distance solves performed.
    pub pair_solves: usize,
    /// Span pairs whose solver hit the iteration cap; their best value was
    /// still used.
    pub non_converged: Vec<NonConvergedPair>,
}

/// Everything produced by weighting one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupWeighting {
    /// Groupwise advantage per rollout, in group order.
    pub advantages: Vec<f64>,
    /// Token weights and weighted advantages per rollout, in group order.
    pub rollout_weights: Vec<TokenWeightVector>,
    /// Span distances per rollout (`None` on the fallback path).
    pub table: SpanDistanceTable,
    /// Norm statistics; `None` when the fallback path skipped them.
    pub stats: Option<GroupNormStats>,
    pub report: GroupWeightReport,
}

/// Groupwise advantages: `(r - mean) / (population_std + advantage_epsilon)`.
/// Uniform rewards give exactly 0 for every rollout (zero numerator).
pub fn grpo_advantages(rewards: &[bool], advantage_epsilon: f64) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(ShearError::Validation(
            "advantages need at least one reward".into(),
        ));
    }
    if !(advantage_epsilon > 0.0 && advantage_epsilon.is_finite()) {
        return Err(ShearError::Config(format!(
            "advantage_epsilon must be positive and finite, got {advantage_epsilon}"
        )));
    }
    let g = rewards.len() as f64;
    let mean = rewards.iter().map(|&r| f64::from(u8::from(r))).sum::<f64>() / g;
    let var = rewards
        .iter()
        .map(|&r| {
            let d = f64::from(u8::from(r)) - mean;
            d * d
        })
        .sum::<f64>()
        / g;
    let denom = var.sqrt() + advantage_epsilon;
    Ok(rewards
        .iter()
        .map(|&r| (f64::from(u8::from(r)) - mean) / denom)
        .collect())
}

/// Indices of the opposite-outcome rollouts for the rollout at `index`.
/// An empty result signals the unit-weight fallback.
pub fn opposing_set<'a>(partition: &'a GroupPartition, index: usize) -> Result<&'a [usize]> {
    if partition.correct.contains(&index) {
        Ok(&partition.incorrect)
    } else if partition.incorrect.contains(&index) {
        Ok(&partition.correct)
    } else {
        Err(ShearError::Lookup(format!(
            "rollout index {index} is outside the partitioned group"
        )))
    }
}

/// Distance between two span clouds under the configured metric, plus
/// solver accounting when the metric has any.
pub struct PairDistance {
    pub distance: f64,
    /// `(iterations, converged)` for Sinkhorn; `None` for closed-form
    /// metrics.
    pub solve: Option<(usize, bool)>,
}

/// True when every point of both clouds equals the first point of `p`
/// exactly; the only case where the median bandwidth heuristic degenerates
/// but the MMD value (zero) is still well defined.
fn coincident(p: &PointCloud, q: &PointCloud) -> bool {
    let first = p.point(0);
    (0..p.len()).all(|i| p.point(i) == first) && (0..q.len()).all(|j| q.point(j) == first)
}

/// Metric dispatch for one span pair. Callers are responsible for passing
/// operands in a canonical order when bitwise symmetry matters.
pub fn span_pair_distance(
    p: &PointCloud,
    q: &PointCloud,
    cfg: &WeightingConfig,
) -> Result<PairDistance> {
    match cfg.metric {
        DistanceMetric::Sinkhorn => {
            let r = sinkhorn(p, q, &cfg.sinkhorn_cfg)?;
            let distance = match cfg.sinkhorn_output {
                SinkhornOutput::Regularized => r.value,
                SinkhornOutput::TransportCost => r.transport_cost,
            };
            Ok(PairDistance {
                distance,
                solve: Some((r.iterations_used, r.converged)),
            })
        }
        DistanceMetric::ExactW1 => Ok(PairDistance {
            distance: exact_w1_capped(p, q, DEFAULT_MATCHING_CAP)?,
            solve: None,
        }),
        DistanceMetric::CosineMean => Ok(PairDistance {
            distance: mean_cosine_distance(p, q)?,
            solve: None,
        }),
        DistanceMetric::Chamfer => Ok(PairDistance {
            distance: chamfer_distance(p, q)?,
            solve: None,
        }),
        DistanceMetric::Mmd => {
            let bandwidth = match cfg.mmd_bandwidth {
                Some(bw) => bw,
                None => match median_heuristic_bandwidth(p, q) {
                    Ok(bw) => bw,
                    Err(ShearError::Degenerate(_)) if coincident(p, q) => {
                        return Ok(PairDistance {
                            distance: 0.0,
                            solve: None,
                        });
                    }
                    Err(e) => return Err(e),
                },
            };
            Ok(PairDistance {
                distance: mmd_rbf(p, q, bandwidth)?,
                solve: None,
            })
        }
    }
}

/// Entry cap for the shared token-level grid of [`cross_span_distances`]
/// (three matrices of this many `f64` entries are alive at once, ~54 MB at
/// the cap); larger rollout pairs fall back to per-span-pair solves.
const GRID_ENTRY_CAP: usize = 2_250_000;

/// Hidden states widened to the `f64` the distance kernels work in.
fn token_matrix(m: &HiddenStateMatrix) -> Array2<f64> {
    let data: Vec<f64> = m.raw().iter().map(|&v| f64::from(v)).collect();
    Array2::from_shape_vec((m.tokens(), m.dim()), data)
        .expect("hidden-state matrices are validated rectangular")
}

/// All span-pair distances between two rollouts: rows indexed by `spans_a`,
/// columns by `spans_b`. Callers pass operands in canonical order (lower
/// rollout index first); sharing one orientation keeps the two directions
/// of every pair bitwise identical.
///
/// For the Sinkhorn metric the whole pair shares one token-level
/// cost/kernel grid — sliding spans overlap by `w − s` tokens, so building
/// per-span-pair matrices would recompute almost every entry several times
/// — and each span pair solves on slices of it. Other metrics, and pairs
/// whose grid would exceed [`GRID_ENTRY_CAP`], score span clouds directly.
fn cross_span_distances(
    a: &Rollout,
    b: &Rollout,
    spans_a: &[Span],
    spans_b: &[Span],
    cfg: &WeightingConfig,
) -> Result<Vec<Vec<PairDistance>>> {
    let tokens_a = a.hidden.tokens();
    let tokens_b = b.hidden.tokens();
    if cfg.metric == DistanceMetric::Sinkhorn && tokens_a * tokens_b <= GRID_ENTRY_CAP {
        let am = token_matrix(&a.hidden);
        let bm = token_matrix(&b.hidden);
        let cost = token_cost_grid(am.view(), bm.view());
        let eps = cfg.sinkhorn_cfg.epsilon;
        let kernel = cost.mapv(|c| (-c / eps).exp());
        return spans_a
            .par_iter()
            .map(|sa| {
                spans_b
                    .iter()
                    .map(|sb| {
                        let (ra, rb) = (sa.a - 1..sa.b, sb.a - 1..sb.b);
                        let cs = cost.slice(s![ra.clone(), rb.clone()]);
                        let r = match sinkhorn_sliced(
                            cs,
                            kernel.slice(s![ra.clone(), rb.clone()]),
                            &cfg.sinkhorn_cfg,
                        )? {
                            Some(r) => r,
                            // Slice needs the annealed path; rerun on an
                            // owned copy (identical kernel values).
                            None => sinkhorn_from_cost(&cs.to_owned(), &cfg.sinkhorn_cfg)?,
                        };
                        let distance = match cfg.sinkhorn_output {
                            SinkhornOutput::Regularized => r.value,
                            SinkhornOutput::TransportCost => r.transport_cost,
                        };
                        Ok(PairDistance {
                            distance,
                            solve: Some((r.iterations_used, r.converged)),
                        })
                    })
                    .collect()
            })
            .collect();
    }

    let clouds_a: Vec<PointCloud> = spans_a
        .iter()
        .map(|sp| span_cloud(&a.hidden, sp))
        .collect::<Result<_>>()?;
    let clouds_b: Vec<PointCloud> = spans_b
        .iter()
        .map(|sp| span_cloud(&b.hidden, sp))
        .collect::<Result<_>>()?;
    clouds_a
        .par_iter()
        .map(|pa| {
            clouds_b
                .iter()
                .map(|pb| span_pair_distance(pa, pb, cfg))
                .collect()
        })
        .collect()
}

/// Per-span minimum distance from `rollout_index` into the opposing set.
/// `shear_weight_group` computes the same values through the same shared
/// cross-pair matrices and canonical operand order, so they agree bitwise.
pub fn min_opposing_distance(
    group: &RolloutGroup,
    rollout_index: usize,
    opposing: &[usize],
    cfg: &WeightingConfig,
) -> Result<Vec<f64>> {
    if opposing.is_empty() {
        return Err(ShearError::Validation(
            "min_opposing_distance needs a nonempty opposing set".into(),
        ));
    }
    let rollouts = group.rollouts();
    let own = &rollouts[rollout_index];
    let own_spans = decompose(own.tokens(), &cfg.span_cfg);
    let mut best = vec![f64::INFINITY; own_spans.len()];
    for &j in opposing {
        let other = &rollouts[j];
        let other_spans = decompose(other.tokens(), &cfg.span_cfg);
        if rollout_index < j {
            let m = cross_span_distances(own, other, &own_spans, &other_spans, cfg)?;
            for (k, row) in m.iter().enumerate() {
                for e in row {
                    best[k] = best[k].min(e.distance);
                }
            }
        } else {
            let m = cross_span_distances(other, own, &other_spans, &own_spans, cfg)?;
            for row in &m {
                for (k, e) in row.iter().enumerate() {
                    best[k] = best[k].min(e.distance);
                }
            }
        }
    }
    Ok(best)
}

/// Mean hidden-state norm over every token of the group.
pub fn group_norm(group: &RolloutGroup) -> Result<GroupNormStats> {
    let mut sum = 0.0f64;
    let mut total = 0usize;
    for r in group.rollouts() {
        for t in 1..=r.tokens() {
            sum += r.hidden.row_norm(t);
            total += 1;
        }
    }
    let mean_norm = sum / total as f64;
    if !(mean_norm > 0.0) {
        return Err(ShearError::Degenerate(
            "group mean hidden-state norm is zero; weights would be undefined".into(),
        ));
    }
    Ok(GroupNormStats {
        mean_norm,
        total_tokens: total,
    })
}

/// Pool span distances onto tokens and normalize into weights.
pub fn pool_token_weights(
    distances: &[f64],
    cover: &[Vec<usize>],
    stats: &GroupNormStats,
    cfg: &WeightingConfig,
) -> Result<Vec<f64>> {
    let mut pooled = Vec::with_capacity(cover.len());
    for spans_here in cover {
        if spans_here.iter().any(|&k| k >= distances.len()) {
            return Err(ShearError::Bounds(format!(
                "token cover references span {} but only {} distances exist",
                spans_here.iter().max().unwrap(),
                distances.len()
            )));
        }
        let value = match cfg.pooling {
            PoolingMode::Max => spans_here
                .iter()
                .map(|&k| distances[k])
                .fold(f64::NEG_INFINITY, f64::max),
            PoolingMode::Mean => {
                spans_here.iter().map(|&k| distances[k]).sum::<f64>() / spans_here.len() as f64
            }
        };
        pooled.push(value);
    }
    match cfg.normalization {
        NormalizationMode::CrossRollout => Ok(pooled.iter().map(|p| p / stats.mean_norm).collect()),
        NormalizationMode::PerRollout => {
            let mean = pooled.iter().sum::<f64>() / pooled.len() as f64;
            if mean > 0.0 {
                Ok(pooled.iter().map(|p| p / mean).collect())
            } else {
                // Every covering span sits at distance zero: no scale exists,
                // so fall back to unit weights (keeps the unit-mean property).
                Ok(vec![1.0; pooled.len()])
            }
        }
    }
}

/// Attach an advantage to finished weights.
pub fn weighted_advantages(advantage: f64, weights: &[f64]) -> TokenWeightVector {
    let weighted = weights.iter().map(|w| advantage * w).collect();
    TokenWeightVector {
        advantage,
        weights: weights.to_vec(),
        weighted,
    }
}

/// The whole pipeline for one group.
///
/// Cross-group span-pair distances are computed once per (correct,
/// incorrect) rollout pair and shared between both directions' minima.
/// Span-pair solves run in parallel; every reduction over them (min per
/// span) is order-independent, so results do not depend on thread count.
pub fn shear_weight_group(group: &RolloutGroup, cfg: &WeightingConfig) -> Result<GroupWeighting> {
    cfg.validate()?;
    let partition = partition_group(group);
    let rollouts = group.rollouts();
    let rewards: Vec<bool> = rollouts.iter().map(|r| r.reward).collect();
    let advantages = grpo_advantages(&rewards, cfg.advantage_epsilon)?;

    if partition.correct.is_empty() || partition.incorrect.is_empty() {
        // Fallback: no opposing sets exist anywhere in the group.
        let rollout_weights = advantages
            .iter()
            .zip(rollouts)
            .map(|(&a, r)| weighted_advantages(a, &vec![1.0; r.tokens()]))
            .collect();
        return Ok(GroupWeighting {
            advantages,
            rollout_weights,
            table: SpanDistanceTable {
                entries: vec![None; rollouts.len()],
            },
            stats: None,
            report: GroupWeightReport::default(),
        });
    }

    let stats = group_norm(group)?;
    let spans_per: Vec<Vec<Span>> = rollouts
        .iter()
        .map(|r| decompose(r.tokens(), &cfg.span_cfg))
        .collect();

    // One shared span-distance matrix per (correct, incorrect) rollout
    // pair, reused by both directions' minima. Pairs run sequentially (each
    // owns a large shared grid); spans within a pair run in parallel, and
    // every reduction over solves (min per span) is order-independent, so
    // results do not depend on thread count. Matrices are stored as
    // [correct span][incorrect span] whichever operand order was canonical.
    let pairs: Vec<(usize, usize)> = partition
        .correct
        .iter()
        .flat_map(|&c| partition.incorrect.iter().map(move |&w| (c, w)))
        .collect();
    let mut matrices: Vec<Vec<Vec<f64>>> = Vec::with_capacity(pairs.len());
    let mut report = GroupWeightReport::default();
    for &(c, w) in &pairs {
        let (lo, hi) = (c.min(w), c.max(w));
        let m = cross_span_distances(
            &rollouts[lo],
            &rollouts[hi],
            &spans_per[lo],
            &spans_per[hi],
            cfg,
        )?;
        report.pair_solves += spans_per[c].len() * spans_per[w].len();
        let mut oriented = vec![vec![0.0f64; spans_per[w].len()]; spans_per[c].len()];
        for (i, row) in m.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                let (k, l) = if c < w { (i, j) } else { (j, i) };
                oriented[k][l] = e.distance;
                if let Some((iterations, converged)) = e.solve {
                    if !converged {
                        report.non_converged.push(NonConvergedPair {
                            correct: c,
                            incorrect: w,
                            correct_span: k,
                            incorrect_span: l,
                            iterations,
                        });
                    }
                }
            }
        }
        matrices.push(oriented);
    }

    // Min-reduce the shared matrices in both directions.
    let mut entries: Vec<Option<Vec<f64>>> = vec![None; rollouts.len()];
    for &c in &partition.correct {
        let mut d = vec![f64::INFINITY; spans_per[c].len()];
        for (pi, &(pc, _)) in pairs.iter().enumerate() {
            if pc != c {
                continue;
            }
            for (k, row) in matrices[pi].iter().enumerate() {
                for &v in row {
                    d[k] = d[k].min(v);
                }
            }
        }
        entries[c] = Some(d);
    }
    for &w in &partition.incorrect {
        let mut d = vec![f64::INFINITY; spans_per[w].len()];
        for (pi, &(_, pw)) in pairs.iter().enumerate() {
            if pw != w {
                continue;
            }
            for row in &matrices[pi] {
                for (l, &v) in row.iter().enumerate() {
                    d[l] = d[l].min(v);
                }
            }
        }
        entries[w] = Some(d);
    }
    let table = SpanDistanceTable { entries };

    let mut rollout_weights = Vec::with_capacity(rollouts.len());
    for (i, r) in rollouts.iter().enumerate() {
        let distances = table.entries[i]
            .as_ref()
            .expect("both classes nonempty, so every rollout has distances");
        let cover = token_cover(r.tokens(), &cfg.span_cfg);
        let weights = pool_token_weights(distances, &cover, &stats, cfg)?;
        rollout_weights.push(weighted_advantages(advantages[i], &weights));
    }

    Ok(GroupWeighting {
        advantages,
        rollout_weights,
        table,
        stats: Some(stats),
        report,
    })
}
