//! Actor–critic PPO with dynamic structured pruning, plus the greedy and
//! random baseline pricing policies.
//!
//! The learner is deliberately self-contained: small dense networks with
//! hand-written forward/backward passes (so gradient correctness is checkable
//! against finite differences), clipped-surrogate policy updates with
//! generalized advantage estimation, and neuron-level pruning driven by a
//! cubic density schedule. Each UAV agent trains an independent actor and
//! critic over its own observation window.
//!
//! Module layout:
//! - [`net`]: masked multilayer perceptron and its gradients,
//! - [`gae`]: advantage estimation,
//! - [`loss`]: clipped actor surrogate and critic regression, with gradients,
//! - [`prune`]: importance scores, density schedule, mask updates,
//! - [`train`]: the rollout/update/prune loop and its metrics,
//! - [`baselines`]: greedy one-step and uniform-random pricing policies,
//! - [`checkpoint`]: versioned save/load of trained agents.

pub mod baselines;
pub mod checkpoint;
pub mod gae;
pub mod loss;
pub mod net;
pub mod prune;
pub mod train;

use thiserror::Error;

/// Errors raised by the learning stack.
#[derive(Debug, Error, PartialEq)]
pub enum PpoError {
    /// Input length does not match a layer's expectation.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    /// A configuration invariant is violated.
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    /// A pruning event would have removed every neuron of one layer.
    #[error("pruning would zero out layer {layer}; event skipped")]
    LayerCollapse { layer: usize },
    /// A loss became NaN during training.
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    /// Propagated environment failure.
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
    /// A checkpoint file could not be read or has the wrong version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}
