use super::{clamp_action, Clock, Env, EnvSpec, Step};
use crate::error::Result;

pub const EPISODE_STEPS: usize = 10;

/// Ten-step stub emitting reward 1 regardless of action; state is the
/// elapsed fraction of the episode. Used to check evaluation bookkeeping.
#[derive(Debug, Clone, Default)]
pub struct ConstantEnv {
    clock: Clock,
}

impl ConstantEnv {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Env for ConstantEnv {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            name: "constant",
            state_dim: 1,
            action_dim: 1,
            max_episode_steps: EPISODE_STEPS,
            reward_range: (1.0, 1.0),
            expert_return: EPISODE_STEPS as f64,
            description: "stub: reward 1 per step, 10 steps",
        }
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.clock.reset();
        vec![0.0]
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        clamp_action("constant", action, 1)?;
        let truncated = self.clock.tick("constant", EPISODE_STEPS)?;
        Ok(Step {
            state: vec![self.clock.t as f64 / EPISODE_STEPS as f64],
            reward: 1.0,
            terminated: false,
            truncated,
        })
    }

    fn fresh(&self) -> Box<dyn Env> {
        Box::new(Self::new())
    }
}
