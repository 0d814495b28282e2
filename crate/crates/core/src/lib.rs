//! Dual-role (Observer / Solver) policy-gradient training on a synthetic
//! counting task, with single-role GRPO and DAPO baselines.
//!
//! A single linear-softmax policy plays both roles. The Observer writes a
//! caption of scene facts; the Solver answers the question from the caption
//! (and, after warmup, the scene). Everything is small enough that rewards,
//! gradients, and error categories can be checked exactly.

pub mod advantage;
pub mod error;
pub mod metrics;
pub mod optimize;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod rollout;
pub mod synthenv;
pub mod trainer;

pub use error::{Error, Result};
