//! Built-in continuous-control environments and offline dataset generation.
//!
//! All built-ins have action space `[-1, 1]^action_dim`, deterministic
//! dynamics given the reset seed, and no early termination: episodes end by
//! truncation at `max_episode_steps`.

mod constant;
mod dataset;
mod pendulum;
mod point_mass;

pub use constant::ConstantEnv;
pub use dataset::{
    generate_dataset, mean_episode_return, GenerationBudget, GeneratedDataset, Manifest, Tier,
};
pub use pendulum::PendulumEnv;
pub use point_mass::PointMassEnv;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: &'static str,
    pub state_dim: usize,
    pub action_dim: usize,
    pub max_episode_steps: usize,
    /// Every emitted reward lies in this closed interval.
    pub reward_range: (f64, f64),
    /// Evaluation return (mean-action policy) an online learner must reach
    /// before its policy counts as expert for dataset generation.
    pub expert_return: f64,
    pub description: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: Vec<f64>,
    pub reward: f64,
    /// Genuine terminal state; bootstrapping must stop.
    pub terminated: bool,
    /// Time limit reached; bootstrapping continues.
    pub truncated: bool,
}

impl Step {
    pub fn episode_over(&self) -> bool {
        self.terminated || self.truncated
    }
}

pub trait Env: Send {
    fn spec(&self) -> EnvSpec;

    /// Starts a new episode; the start state is a pure function of `seed`.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    /// Advances one step. Actions outside `[-1, 1]` are clamped with a warning.
    fn step(&mut self, action: &[f64]) -> Result<Step>;

    /// Fresh instance of the same environment, not yet reset.
    fn fresh(&self) -> Box<dyn Env>;
}

pub const ENV_NAMES: &[&str] = &["point-mass", "pendulum", "constant"];

pub fn make_env(name: &str) -> Result<Box<dyn Env>> {
    match name {
        "point-mass" => Ok(Box::new(PointMassEnv::new())),
        "pendulum" => Ok(Box::new(PendulumEnv::new())),
        "constant" => Ok(Box::new(ConstantEnv::new())),
        other => Err(Error::Env(format!(
            "unknown environment `{other}` (expected one of {})",
            ENV_NAMES.join(", ")
        ))),
    }
}

/// Clamps to `[-1, 1]` per dimension, warning when anything changed.
pub(crate) fn clamp_action(name: &str, action: &[f64], action_dim: usize) -> Result<Vec<f64>> {
    if action.len() != action_dim {
        return Err(Error::Dimension {
            what: format!("{name} action"),
            expected: action_dim,
            got: action.len(),
        });
    }
    if action.iter().any(|a| a.is_nan()) {
        return Err(Error::NonFinite {
            what: format!("{name} action"),
        });
    }
    let clamped: Vec<f64> = action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
    if clamped != action {
        log::warn!("{name}: action {action:?} clamped to [-1, 1]");
    }
    Ok(clamped)
}

/// Shared episode bookkeeping for the built-ins.
#[derive(Debug, Clone, Default)]
pub(crate) struct Clock {
    pub t: usize,
    pub active: bool,
}

impl Clock {
    pub fn reset(&mut self) {
        self.t = 0;
        self.active = true;
    }

    /// Advances the clock; returns true when the time limit is reached.
    pub fn tick(&mut self, name: &str, limit: usize) -> Result<bool> {
        if !self.active {
            return Err(Error::Env(format!("{name}: step called after episode end without reset")));
        }
        self.t += 1;
        if self.t >= limit {
            self.active = false;
        }
        Ok(!self.active)
    }
}
