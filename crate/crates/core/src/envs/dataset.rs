//! Tiered offline datasets in the style of D4RL.
//!
//! `random` rolls out uniform actions. The other tiers come from one online
//! SAC run from scratch: `medium` is the first evaluated policy covering a
//! third of the way from the random return to the env's expert return,
//! `medium-replay` is that run's replay buffer up to the same point, and
//! `expert` is the first policy reaching the expert return. Policy tiers roll
//! out the stochastic policy.

use std::fmt;
use std::path::Path;

use rand::{Rng, RngCore};

use super::Env;
use crate::actor_critic::SquashedGaussianPolicy;
use crate::error::{Error, Result};
use crate::replay::{ReplayBuffer, Transition};
use crate::rng::{stream, Purpose};
use crate::trainer::{evaluate, So2Config, TrainState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    Random,
    Medium,
    MediumReplay,
    Expert,
}

impl Tier {
    pub const ALL: [Tier; 4] = [Tier::Random, Tier::Medium, Tier::MediumReplay, Tier::Expert];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Random => "random",
            Tier::Medium => "medium",
            Tier::MediumReplay => "medium-replay",
            Tier::Expert => "expert",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Tier::ALL
            .into_iter()
            .find(|t| t.as_str() == s || t.as_str().replace('-', "_") == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown tier `{s}` (expected one of random, medium, medium-replay, expert)"
                ))
            })
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Limits and settings for the online run behind the policy tiers.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationBudget {
    pub max_env_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub trainer: So2Config,
}

impl Default for GenerationBudget {
    fn default() -> Self {
        Self {
            max_env_steps: 60_000,
            eval_interval: 2_000,
            eval_episodes: 5,
            trainer: So2Config {
                sigma: 0.0,
                n_upc: 2,
                policy_upc: 2,
                random_steps: 1_000,
                actor_lr: 1e-3,
                critic_lr: 1e-3,
                beta_lr: 1e-3,
                ..So2Config::desk()
            },
        }
    }
}

/// Sidecar text record describing how a dataset was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub env: String,
    pub tier: Tier,
    pub seed: u64,
    pub size: usize,
    /// Mean per-step reward of the data scaled to the episode length.
    pub mean_return: f64,
    /// Mean-action evaluation return of the generating policy (policy tiers).
    pub policy_eval_return: Option<f64>,
    /// Online environment steps the generating run used (policy tiers).
    pub training_env_steps: Option<u64>,
}

pub const MANIFEST_VERSION_LINE: &str = "# so2-dataset-manifest v1";

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{MANIFEST_VERSION_LINE}\nenv = {}\ntier = {}\nseed = {}\nsize = {}\nmean_return = {}\n",
            self.env, self.tier, self.seed, self.size, self.mean_return
        );
        if let Some(r) = self.policy_eval_return {
            s.push_str(&format!("policy_eval_return = {r}\n"));
        }
        if let Some(n) = self.training_env_steps {
            s.push_str(&format!("training_env_steps = {n}\n"));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = std::collections::BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("manifest line `{line}`")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            kv.get(k)
                .cloned()
                .ok_or_else(|| Error::InvalidArgument(format!("manifest missing `{k}`")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("manifest `{k}` is not a number")))
        };
        Ok(Self {
            env: get("env")?,
            tier: Tier::parse(&get("tier")?)?,
            seed: num("seed")? as u64,
            size: num("size")? as usize,
            mean_return: num("mean_return")?,
            policy_eval_return: kv.contains_key("policy_eval_return").then(|| num("policy_eval_return")).transpose()?,
            training_env_steps: kv
                .contains_key("training_env_steps")
                .then(|| num("training_env_steps").map(|v| v as u64))
                .transpose()?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub buffer: ReplayBuffer,
    pub manifest: Manifest,
}

/// Mean per-step reward times `episode_len`; equals the mean episode return
/// when the buffer holds whole episodes.
pub fn mean_episode_return(buffer: &ReplayBuffer, episode_len: usize) -> f64 {
    if buffer.is_empty() {
        return 0.0;
    }
    buffer.iter().map(|t| t.reward).sum::<f64>() / buffer.len() as f64 * episode_len as f64
}

enum Behavior<'a> {
    Uniform,
    Policy(&'a SquashedGaussianPolicy),
}

fn rollout(env: &mut dyn Env, behavior: Behavior<'_>, size: usize, seed: u64) -> Result<ReplayBuffer> {
    let spec = env.spec();
    let mut rng = stream(seed, Purpose::Rollout);
    let mut buffer = ReplayBuffer::new(spec.state_dim, spec.action_dim, size)?;
    let mut s = env.reset(rng.next_u64());
    while buffer.len() < size {
        let action = match behavior {
            Behavior::Uniform => (0..spec.action_dim)
                .map(|_| rng.random_range(-1.0..=1.0))
                .collect(),
            Behavior::Policy(p) => p.sample(&s, &mut rng)?.0,
        };
        let step = env.step(&action)?;
        buffer.push(Transition {
            state: s,
            action,
            reward: step.reward,
            next_state: step.state.clone(),
            done: step.terminated,
        })?;
        s = if step.episode_over() {
            env.reset(rng.next_u64())
        } else {
            step.state
        };
    }
    Ok(buffer)
}

struct Milestone {
    policy: SquashedGaussianPolicy,
    eval_return: f64,
    env_steps: u64,
    replay: Option<ReplayBuffer>,
}

/// Trains online from scratch until the evaluation return reaches `threshold`.
fn train_until(
    env: &dyn Env,
    threshold: f64,
    keep_replay: bool,
    seed: u64,
    budget: &GenerationBudget,
) -> Result<Milestone> {
    let spec = env.spec();
    let empty = ReplayBuffer::new(spec.state_dim, spec.action_dim, 1)?;
    let mut state = TrainState::new(budget.trainer.clone(), env.fresh(), empty, seed)?;
    let mut eval_env = env.fresh();
    let eval_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xE7A1;
    let mut last = f64::NEG_INFINITY;
    while state.counters.env_steps < budget.max_env_steps {
        state.finetune_epoch()?;
        if state.counters.env_steps % budget.eval_interval == 0 {
            let (ret, _) = evaluate(&state.policy, eval_env.as_mut(), budget.eval_episodes, eval_seed)?;
            log::info!(
                "{}: generation run at {} env steps, eval return {ret:.2} (threshold {threshold:.2})",
                spec.name,
                state.counters.env_steps
            );
            last = ret;
            if ret >= threshold {
                return Ok(Milestone {
                    policy: state.policy.clone(),
                    eval_return: ret,
                    env_steps: state.counters.env_steps,
                    replay: keep_replay.then(|| state.online.clone()),
                });
            }
        }
    }
    Err(Error::Generation(format!(
        "{}: policy did not reach return {threshold:.2} within {} env steps (last eval {last:.2}); \
         increase the generation budget (max_env_steps)",
        spec.name, budget.max_env_steps
    )))
}

/// Builds a dataset of `size` transitions for `tier`, reproducible from `seed`.
pub fn generate_dataset(
    env: &dyn Env,
    tier: Tier,
    size: usize,
    seed: u64,
    budget: &GenerationBudget,
) -> Result<GeneratedDataset> {
    if size == 0 {
        return Err(Error::InvalidArgument("dataset size must be >= 1".into()));
    }
    let spec = env.spec();
    let mut work = env.fresh();
    let (buffer, policy_eval_return, training_env_steps) = match tier {
        Tier::Random => (rollout(work.as_mut(), Behavior::Uniform, size, seed)?, None, None),
        Tier::Medium | Tier::MediumReplay | Tier::Expert => {
            let random_return = {
                let probe = rollout(
                    work.as_mut(),
                    Behavior::Uniform,
                    budget.eval_episodes * spec.max_episode_steps,
                    seed ^ 0xA5A5,
                )?;
                mean_episode_return(&probe, spec.max_episode_steps)
            };
            let threshold = if tier == Tier::Expert {
                spec.expert_return
            } else {
                random_return + (spec.expert_return - random_return) / 3.0
            };
            let m = train_until(env, threshold, tier == Tier::MediumReplay, seed, budget)?;
            let buffer = match m.replay {
                Some(replay) => {
                    let skip = replay.len().saturating_sub(size);
                    let mut out = ReplayBuffer::new(spec.state_dim, spec.action_dim, size)?;
                    for t in replay.iter().skip(skip) {
                        out.push(t.clone())?;
                    }
                    out
                }
                None => rollout(work.as_mut(), Behavior::Policy(&m.policy), size, seed)?,
            };
            (buffer, Some(m.eval_return), Some(m.env_steps))
        }
    };
    let manifest = Manifest {
        env: spec.name.to_string(),
        tier,
        seed,
        size: buffer.len(),
        mean_return: mean_episode_return(&buffer, spec.max_episode_steps),
        policy_eval_return,
        training_env_steps,
    };
    Ok(GeneratedDataset { buffer, manifest })
}
