//! Core data model: hidden-state matrices, rollouts, groups, and the
//! reward partition.
//!
//! Hidden states are stored exactly as they arrive from a trainer dump —
//! 32-bit floats, one row per token — and every computation that consumes
//! them widens to `f64`. Keeping the stored precision separate from the
//! arithmetic precision is what makes corpus round-trips bit-exact.

use crate::error::{Result, ShearError};

/// Dense `T x d` matrix of hidden states for one rollout, stored row-major
/// in the dump precision (`f32`).
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStateMatrix {
    data: Vec<f32>,
    rows: usize,
    cols: usize,
}

impl HiddenStateMatrix {
    /// Build a matrix from row-major data. Rejects empty shapes, length
    /// mismatches, and non-finite entries (the offending token is named).
    pub fn new(data: Vec<f32>, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(ShearError::Validation(format!(
                "hidden-state matrix must be non-empty, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(ShearError::DimensionMismatch(format!(
                "hidden-state buffer holds {} values, shape {rows}x{cols} needs {}",
                data.len(),
                rows * cols
            )));
        }
        for (i, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(ShearError::Validation(format!(
                    "non-finite hidden state at token {} dim {}",
                    i / cols + 1,
                    i % cols
                )));
            }
        }
        Ok(Self { data, rows, cols })
    }

    /// Number of tokens (rows).
    pub fn tokens(&self) -> usize {
        self.rows
    }

    /// Hidden dimension (columns).
    pub fn dim(&self) -> usize {
        self.cols
    }

    /// Row for 1-based token index `t`.
    pub fn row(&self, t: usize) -> &[f32] {
        let i = t - 1;
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Flat row-major storage, in dump order.
    pub fn raw(&self) -> &[f32] {
        &self.data
    }

    /// Euclidean norm of token `t`'s hidden state, accumulated in `f64`.
    pub fn row_norm(&self, t: usize) -> f64 {
        self.row(t)
            .iter()
            .map(|&v| {
                let v = v as f64;
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// One sampled completion: an opaque id, its binary reward, and the hidden
/// states it visited.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub id: String,
    pub reward: bool,
    pub hidden: HiddenStateMatrix,
}

impl Rollout {
    /// Token count of this rollout.
    pub fn tokens(&self) -> usize {
        self.hidden.tokens()
    }
}

/// A group of rollouts sampled for the same prompt. All members share the
/// hidden dimension; ids are unique within the group.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub id: String,
    rollouts: Vec<Rollout>,
}

impl RolloutGroup {
    /// Assemble a group, checking it is non-empty, dimensionally consistent,
    /// and free of duplicate rollout ids.
    pub fn new(id: impl Into<String>, rollouts: Vec<Rollout>) -> Result<Self> {
        let id = id.into();
        if rollouts.is_empty() {
            return Err(ShearError::Validation(format!(
                "group {id:?} has no rollouts"
            )));
        }
        let dim = rollouts[0].hidden.dim();
        for r in &rollouts {
            if r.hidden.dim() != dim {
                return Err(ShearError::DimensionMismatch(format!(
                    "rollout {:?} has dim {}, group {id:?} uses {dim}",
                    r.id,
                    r.hidden.dim()
                )));
            }
        }
        for (i, r) in rollouts.iter().enumerate() {
            if rollouts[..i].iter().any(|p| p.id == r.id) {
                return Err(ShearError::Validation(format!(
                    "duplicate rollout id {:?} in group {id:?}",
                    r.id
                )));
            }
        }
        Ok(Self { id, rollouts })
    }

    /// Rollouts in manifest order.
    pub fn rollouts(&self) -> &[Rollout] {
        &self.rollouts
    }

    /// Number of rollouts in the group.
    pub fn len(&self) -> usize {
        self.rollouts.len()
    }

    /// True when the group holds no rollouts (never constructed, but keeps
    /// clippy and callers honest).
    pub fn is_empty(&self) -> bool {
        self.rollouts.is_empty()
    }

    /// Shared hidden dimension.
    pub fn dim(&self) -> usize {
        self.rollouts[0].hidden.dim()
    }

    /// Total token count over all rollouts.
    pub fn total_tokens(&self) -> usize {
        self.rollouts.iter().map(Rollout::tokens).sum()
    }

    /// Position of the rollout with the given id.
    pub fn index_of(&self, rollout_id: &str) -> Result<usize> {
        self.rollouts
            .iter()
            .position(|r| r.id == rollout_id)
            .ok_or_else(|| {
                ShearError::Lookup(format!(
                    "rollout {rollout_id:?} not found in group {:?}",
                    self.id
                ))
            })
    }
}

/// Sliding-window parameters: window length `w` and stride `s`, in tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SpanConfig {
    pub window: usize,
    pub stride: usize,
}

impl SpanConfig {
    /// Paper-default window/stride.
    pub const DEFAULT_WINDOW: usize = 100;
    /// Paper-default stride.
    pub const DEFAULT_STRIDE: usize = 25;

    /// Validating constructor: requires `1 <= stride <= window`.
    pub fn new(window: usize, stride: usize) -> Result<Self> {
        if window == 0 || stride == 0 || stride > window {
            return Err(ShearError::Config(format!(
                "span config needs 1 <= stride <= window, got window={window} stride={stride}"
            )));
        }
        Ok(Self { window, stride })
    }
}

impl Default for SpanConfig {
    fn default() -> Self {
        Self {
            window: Self::DEFAULT_WINDOW,
            stride: Self::DEFAULT_STRIDE,
        }
    }
}

/// One token window `[a, b]`, 1-based inclusive on both ends. Spans are
/// owned positionally: they belong to whichever rollout's length produced
/// them, so no id is carried here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub a: usize,
    pub b: usize,
}

impl Span {
    /// Number of tokens covered.
    pub fn len(&self) -> usize {
        self.b - self.a + 1
    }

    /// Spans always cover at least one token.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// True when 1-based token `t` falls inside the span.
    pub fn contains(&self, t: usize) -> bool {
        self.a <= t && t <= self.b
    }
}

/// Index sets of the reward partition: positions of reward-1 and reward-0
/// rollouts, each in group order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPartition {
    pub correct: Vec<usize>,
    pub incorrect: Vec<usize>,
}

/// Split a group by reward. The two index sets are disjoint and together
/// cover the whole group; either side may be empty.
pub fn partition_group(group: &RolloutGroup) -> GroupPartition {
    let mut correct = Vec::new();
    let mut incorrect = Vec::new();
    for (i, r) in group.rollouts().iter().enumerate() {
        if r.reward {
            correct.push(i);
        } else {
            incorrect.push(i);
        }
    }
    GroupPartition { correct, incorrect }
}
