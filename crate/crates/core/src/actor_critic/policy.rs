//! Tanh-squashed diagonal Gaussian policy.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{Activation, ForwardTrace, GradientBundle, Mlp};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Added inside `log(1 - tanh(u)^2 + eps)` so saturated actions stay finite.
pub const TANH_EPS: f64 = 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// `log pi(a|s)` of `a = tanh(mean + exp(log_std) * noise)`.
pub fn squashed_log_prob(noise: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    noise
        .iter()
        .zip(log_std)
        .zip(action)
        .map(|((xi, ls), a)| -0.5 * xi * xi - ls - HALF_LN_2PI - (1.0 - a * a + TANH_EPS).ln())
        .sum()
}

/// Reparametrized samples for a batch of states, kept around for the
/// backward pass of the actor update.
#[derive(Debug, Clone)]
pub struct PolicyBatch {
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    trace: ForwardTrace,
    noise: Vec<f64>,
    log_std: Vec<f64>,
    in_range: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SquashedGaussianPolicy {
    trunk: Mlp,
    action_dim: usize,
    log_std_min: f64,
    log_std_max: f64,
}

impl SquashedGaussianPolicy {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * action_dim);
        let trunk = Mlp::new(&sizes, Activation::Relu, Activation::Identity, rng)?;
        Self::from_trunk(trunk, action_dim, LOG_STD_MIN, LOG_STD_MAX)
    }

    /// The trunk must output `[mean; raw_log_std]`, `2 * action_dim` values.
    pub fn from_trunk(
        trunk: Mlp,
        action_dim: usize,
        log_std_min: f64,
        log_std_max: f64,
    ) -> Result<Self> {
        if action_dim == 0 || trunk.output_dim() != 2 * action_dim {
            return Err(Error::Dimension {
                what: "policy trunk output".into(),
                expected: 2 * action_dim,
                got: trunk.output_dim(),
            });
        }
        if !(log_std_min < log_std_max) {
            return Err(Error::InvalidArgument(format!(
                "log_std clamp range [{log_std_min}, {log_std_max}] is empty"
            )));
        }
        Ok(Self {
            trunk,
            action_dim,
            log_std_min,
            log_std_max,
        })
    }

    pub fn with_log_std_range(self, log_std_min: f64, log_std_max: f64) -> Result<Self> {
        Self::from_trunk(self.trunk, self.action_dim, log_std_min, log_std_max)
    }

    pub fn trunk(&self) -> &Mlp {
        &self.trunk
    }

    pub fn trunk_mut(&mut self) -> &mut Mlp {
        &mut self.trunk
    }

    pub fn state_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn log_std_range(&self) -> (f64, f64) {
        (self.log_std_min, self.log_std_max)
    }

    /// Mean and clamped log-std for one state.
    pub fn head(&self, state: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let out = self.trunk.forward(state)?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "policy network output".into(),
            });
        }
        let (mean, raw) = out.split_at(self.action_dim);
        let log_std = raw
            .iter()
            .map(|v| v.clamp(self.log_std_min, self.log_std_max))
            .collect();
        Ok((mean.to_vec(), log_std))
    }

    /// Draws `a = tanh(u)`, `u ~ N(mean, exp(log_std)^2)`, consuming
    /// `action_dim` standard normals from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let noise: Vec<f64> = (0..self.action_dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        self.sample_with_noise(state, &noise)
    }

    /// Deterministic counterpart of [`sample`](Self::sample) for given standard-normal noise.
    pub fn sample_with_noise(&self, state: &[f64], noise: &[f64]) -> Result<(Vec<f64>, f64)> {
        if noise.len() != self.action_dim {
            return Err(Error::Dimension {
                what: "policy noise".into(),
                expected: self.action_dim,
                got: noise.len(),
            });
        }
        let (mean, log_std) = self.head(state)?;
        let action: Vec<f64> = mean
            .iter()
            .zip(&log_std)
            .zip(noise)
            .map(|((m, ls), xi)| (m + ls.exp() * xi).tanh())
            .collect();
        let log_prob = squashed_log_prob(noise, &log_std, &action);
        Ok((action, log_prob))
    }

    pub fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        let (mean, _) = self.head(state)?;
        Ok(mean.into_iter().map(f64::tanh).collect())
    }

    /// Reparametrized samples for `batch` states with noise drawn from `rng`
    /// row by row.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        states: &[f64],
        batch: usize,
        rng: &mut R,
    ) -> Result<PolicyBatch> {
        let noise: Vec<f64> = (0..batch * self.action_dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        self.sample_batch_with_noise(states, batch, noise)
    }

    pub fn sample_batch_with_noise(
        &self,
        states: &[f64],
        batch: usize,
        noise: Vec<f64>,
    ) -> Result<PolicyBatch> {
        let ad = self.action_dim;
        if noise.len() != batch * ad {
            return Err(Error::Dimension {
                what: "policy noise".into(),
                expected: batch * ad,
                got: noise.len(),
            });
        }
        let trace = self.trunk.forward_batch(states, batch)?;
        let out = trace.output();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "policy network output".into(),
            });
        }
        let mut actions = Vec::with_capacity(batch * ad);
        let mut log_std = Vec::with_capacity(batch * ad);
        let mut in_range = Vec::with_capacity(batch * ad);
        let mut log_probs = Vec::with_capacity(batch);
        for n in 0..batch {
            let row = &out[n * 2 * ad..(n + 1) * 2 * ad];
            let xi = &noise[n * ad..(n + 1) * ad];
            let start = actions.len();
            for d in 0..ad {
                let raw = row[ad + d];
                let ls = raw.clamp(self.log_std_min, self.log_std_max);
                in_range.push(raw >= self.log_std_min && raw <= self.log_std_max);
                log_std.push(ls);
                actions.push((row[d] + ls.exp() * xi[d]).tanh());
            }
            log_probs.push(squashed_log_prob(
                xi,
                &log_std[start..],
                &actions[start..],
            ));
        }
        Ok(PolicyBatch {
            actions,
            log_probs,
            trace,
            noise,
            log_std,
            in_range,
        })
    }

    /// Parameter gradient of `sum_n <action_grad[n], a[n]> + logp_grad[n] * log_pi[n]`
    /// through the reparametrized sample (noise held fixed).
    pub fn backward_sample(
        &self,
        sample: &PolicyBatch,
        action_grad: &[f64],
        logp_grad: &[f64],
    ) -> Result<GradientBundle> {
        let ad = self.action_dim;
        let batch = sample.trace.batch();
        if action_grad.len() != batch * ad || logp_grad.len() != batch {
            return Err(Error::Dimension {
                what: "policy upstream gradient".into(),
                expected: batch * ad,
                got: action_grad.len(),
            });
        }
        let mut upstream = vec![0.0; batch * 2 * ad];
        for n in 0..batch {
            let gl = logp_grad[n];
            for d in 0..ad {
                let i = n * ad + d;
                let a = sample.actions[i];
                let one_minus = 1.0 - a * a;
                let du = action_grad[i] * one_minus
                    + gl * 2.0 * a * one_minus / (one_minus + TANH_EPS);
                upstream[n * 2 * ad + d] = du;
                upstream[n * 2 * ad + ad + d] = if sample.in_range[i] {
                    du * sample.log_std[i].exp() * sample.noise[i] - gl
                } else {
                    0.0
                };
            }
        }
        Ok(self.trunk.backward_batch(&sample.trace, &upstream)?)
    }
}
