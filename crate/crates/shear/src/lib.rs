//! Span-level credit assignment for groupwise RL on binary-reward rollouts.
//!
//! Training rollouts are compared through the hidden states they visited: each
//! rollout is cut into overlapping token spans, every span becomes a point
//! cloud in hidden-state space, and clouds from rollouts with opposite rewards
//! are scored against each other with an optimal-transport distance. A span
//! that stays close to the opposite class contributes little to the final
//! outcome; a span that has drifted far from every opposing rollout is where
//! the trajectories actually separated. Those span distances are pooled into
//! per-token weights that rescale the groupwise baseline advantage, so credit
//! concentrates on the tokens that made the difference.
//!
//! Module map:
//!
//! * [`model`] — rollout groups, hidden-state matrices, reward partition.
//! * [`corpus`] — bit-exact binary + JSON manifest corpus format.
//! * [`spans`] — sliding-window span decomposition and token coverage.
//! * [`transport`] — entropic Sinkhorn solver, exact matching oracle, and the
//!   cheaper point-set distances used for ablations.
//! * [`weighting`] — groupwise advantages and the token reweighting pipeline.
//! * [`simulator`] — synthetic rollout generator plus the separation
//!   experiments that check the pipeline's statistical claims at desk scale.
//! * [`diagnostics`] — AUC / rank-correlation / heatmap reporting tools.

pub mod corpus;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod simulator;
pub mod spans;
pub mod transport;
pub mod weighting;

pub use error::{Result, ShearError};
