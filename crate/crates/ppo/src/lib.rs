//! Proximal policy optimization over dense token-level rewards.
//!
//! A step samples one response per prompt, scores it with the verifiable
//! checkers in `drs-core`, assembles per-token rewards (KL included), runs
//! GAE, and then applies K epochs of clipped policy and value updates over
//! shuffled mini-batches.

pub mod env;
pub mod objective;
pub mod trainer;

use drs_core::reward::RewardError;
use drs_policy::ModelError;

pub use env::{evaluate, Evaluation, RewardTask};
pub use objective::{gae, policy_loss, policy_loss_with_grad, value_loss, whiten};
pub use trainer::{OutcomeCounts, PpoConfig, PpoTrainer, StepMetrics, Trajectory};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PpoError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}
