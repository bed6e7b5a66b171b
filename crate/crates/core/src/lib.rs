//! Offline-to-online reinforcement learning with an ensemble soft actor-critic.
//!
//! The finetuning loop adds clipped Gaussian noise to target actions when
//! bootstrapping critic targets, and performs several critic/actor updates per
//! collected environment transition. The [`diagnostics`] module measures how
//! well learned Q-values track Monte-Carlo returns.

pub mod actor_critic;
pub(crate) mod codec;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod nn;
pub mod replay;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
