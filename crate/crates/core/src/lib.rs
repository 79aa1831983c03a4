//! Desk-scale laboratory for group-relative policy optimization.
//!
//! Implements the PPO, GRPO, and ABC (4-boundary) clipped surrogate
//! objectives with exact analytic gradients, a tiny autoregressive softmax
//! policy, synthetic verifiable-reward tasks with token-criticality
//! oracles, a minibatched training loop with old-policy snapshots, and the
//! diagnostic apparatus around them: four-quadrant clipping telemetry,
//! entropy tracking, misattribution rates, and Pass@k / Avg@n evaluation.

pub mod advantage;
pub mod clip;
pub mod config;
pub mod envs;
pub mod error;
pub mod metrics;
pub mod objective;
pub mod policy;
pub mod report;
pub mod testkit;
pub mod trainer;

pub use error::{Error, Result};
