use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{clamp_action, Clock, Env, EnvSpec, Step};
use crate::error::Result;

pub const DT: f64 = 0.05;
pub const FRICTION: f64 = 0.1;
pub const GOAL: [f64; 2] = [1.0, 1.0];
/// Positions are confined to `[-ARENA, ARENA]^2`; hitting a wall zeroes that
/// velocity component.
pub const ARENA: f64 = 2.0;
pub const EPISODE_STEPS: usize = 200;

/// Force-driven point mass on a plane, rewarded for closeness to a fixed goal.
///
/// State is `(x, y, vx, vy)`, action is a 2-D force. Per step:
/// `pos += vel * dt`, then `vel += (a - friction * vel) * dt` using the old
/// velocity, and reward `-|pos - goal| - 0.01 |a|^2` at the new position.
#[derive(Debug, Clone, Default)]
pub struct PointMassEnv {
    pos: [f64; 2],
    vel: [f64; 2],
    clock: Clock,
}

impl PointMassEnv {
    pub fn new() -> Self {
        Self::default()
    }

    /// Overrides position and velocity mid-episode (test hook).
    pub fn set_state(&mut self, pos: [f64; 2], vel: [f64; 2]) {
        self.pos = pos;
        self.vel = vel;
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }
}

impl Env for PointMassEnv {
    fn spec(&self) -> EnvSpec {
        let far = ((ARENA + GOAL[0]).powi(2) + (ARENA + GOAL[1]).powi(2)).sqrt();
        EnvSpec {
            name: "point-mass",
            state_dim: 4,
            action_dim: 2,
            max_episode_steps: EPISODE_STEPS,
            reward_range: (-(far + 0.02), 0.0),
            expert_return: -45.0,
            description: "2-D point mass, dt=0.05, friction=0.1, goal (1,1), arena [-2,2]^2, \
                          reward -|pos-goal| - 0.01|a|^2, 200 steps",
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.pos = [rng.random_range(-0.1..=0.1), rng.random_range(-0.1..=0.1)];
        self.vel = [0.0, 0.0];
        self.clock.reset();
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        let a = clamp_action("point-mass", action, 2)?;
        let truncated = self.clock.tick("point-mass", EPISODE_STEPS)?;
        for d in 0..2 {
            let v = self.vel[d];
            let mut x = self.pos[d] + v * DT;
            let mut nv = v + a[d] * DT - FRICTION * v * DT;
            if x.abs() > ARENA {
                x = x.clamp(-ARENA, ARENA);
                nv = 0.0;
            }
            self.pos[d] = x;
            self.vel[d] = nv;
        }
        let dist = ((self.pos[0] - GOAL[0]).powi(2) + (self.pos[1] - GOAL[1]).powi(2)).sqrt();
        let reward = -dist - 0.01 * (a[0] * a[0] + a[1] * a[1]);
        Ok(Step {
            state: self.observation(),
            reward,
            terminated: false,
            truncated,
        })
    }

    fn fresh(&self) -> Box<dyn Env> {
        Box::new(Self::new())
    }
}
