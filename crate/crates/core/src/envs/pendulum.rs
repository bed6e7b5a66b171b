use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{clamp_action, Clock, Env, EnvSpec, Step};
use crate::error::Result;

pub const DT: f64 = 0.05;
pub const MAX_TORQUE: f64 = 2.0;
pub const MAX_SPEED: f64 = 8.0;
pub const GRAVITY: f64 = 10.0;
pub const EPISODE_STEPS: usize = 200;

/// Torque-limited pendulum swing-up; `theta = 0` is upright.
///
/// Observation `(cos theta, sin theta, theta_dot)`. The reward is charged on
/// the pre-step state: `-(theta^2 + 0.1 theta_dot^2 + 0.001 torque^2)` with
/// `theta` wrapped to `[-pi, pi)`.
#[derive(Debug, Clone, Default)]
pub struct PendulumEnv {
    theta: f64,
    theta_dot: f64,
    clock: Clock,
}

fn wrap_angle(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

impl PendulumEnv {
    pub fn new() -> Self {
        Self::default()
    }

    /// Overrides angle and angular velocity mid-episode (test hook).
    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot;
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

impl Env for PendulumEnv {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            name: "pendulum",
            state_dim: 3,
            action_dim: 1,
            max_episode_steps: EPISODE_STEPS,
            reward_range: (-(PI * PI + 0.1 * MAX_SPEED * MAX_SPEED + 0.001 * MAX_TORQUE * MAX_TORQUE), 0.0),
            expert_return: -175.0,
            description: "pendulum swing-up, dt=0.05, g=10, m=l=1, torque 2*a, |theta_dot|<=8, \
                          reward -(theta^2 + 0.1 theta_dot^2 + 0.001 u^2), 200 steps",
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.theta = rng.random_range(-PI..PI);
        self.theta_dot = rng.random_range(-1.0..=1.0);
        self.clock.reset();
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        let a = clamp_action("pendulum", action, 1)?;
        let truncated = self.clock.tick("pendulum", EPISODE_STEPS)?;
        let u = MAX_TORQUE * a[0];
        let th = wrap_angle(self.theta);
        let reward = -(th * th + 0.1 * self.theta_dot * self.theta_dot + 0.001 * u * u);
        let acc = 3.0 * GRAVITY / 2.0 * self.theta.sin() + 3.0 * u;
        self.theta_dot = (self.theta_dot + acc * DT).clamp(-MAX_SPEED, MAX_SPEED);
        self.theta += self.theta_dot * DT;
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
