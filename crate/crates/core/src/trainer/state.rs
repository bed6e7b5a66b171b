use rand::{Rng, RngCore};

use crate::actor_critic::{
    network_fingerprint, Checkpoint, EntropyCoefficient, QEnsemble, SquashedGaussianPolicy, Which,
};
use crate::envs::Env;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState};
use crate::replay::{sample_union, ReplayBuffer, Transition};
use crate::rng::{stream, Purpose, RngStream};
use crate::trainer::{
    actor_step, compute_target, critic_step, EntropyMode, So2Config, TargetMode, TargetParams,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub env_steps: u64,
    pub episodes: u64,
    /// Iterations of the update loop (one sampled batch each).
    pub grad_steps: u64,
    pub critic_updates: u64,
    pub actor_updates: u64,
    pub polyak_updates: u64,
}

#[derive(Debug, Clone)]
pub struct Rngs {
    pub collection: RngStream,
    pub batch: RngStream,
    pub perturbation: RngStream,
}

impl Rngs {
    pub fn new(seed: u64) -> Self {
        Self {
            collection: stream(seed, Purpose::Collection),
            batch: stream(seed, Purpose::Batch),
            perturbation: stream(seed, Purpose::Perturbation),
        }
    }
}

/// Metrics of one update-loop iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateMetrics {
    pub critic_loss: f64,
    pub actor_objective: Option<f64>,
    pub online_fraction: f64,
}

/// Metrics of one collection step followed by its updates.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub env_step: u64,
    pub critic_loss: f64,
    /// NaN when no actor update ran this epoch.
    pub actor_objective: f64,
    pub beta: f64,
    pub online_fraction: f64,
    pub offline_size: usize,
    pub online_size: usize,
    /// Return of the episode that ended on this step, if any.
    pub episode_return: Option<f64>,
}

/// Everything the training loop mutates.
pub struct TrainState {
    pub config: So2Config,
    pub policy: SquashedGaussianPolicy,
    pub ensemble: QEnsemble,
    pub entropy: EntropyCoefficient,
    pub actor_optimizer: AdamState,
    pub critic_optimizers: Vec<AdamState>,
    pub offline: ReplayBuffer,
    pub online: ReplayBuffer,
    pub rngs: Rngs,
    pub counters: Counters,
    env: Box<dyn Env>,
    obs: Vec<f64>,
    episode_return: f64,
}

impl TrainState {
    /// Freshly initialized networks. `offline` may be empty for pure online runs.
    pub fn new(config: So2Config, env: Box<dyn Env>, offline: ReplayBuffer, seed: u64) -> Result<Self> {
        config.validate()?;
        let spec = env.spec();
        let mut init = stream(seed, Purpose::Init);
        let policy =
            SquashedGaussianPolicy::new(spec.state_dim, spec.action_dim, &config.hidden, &mut init)?
                .with_log_std_range(config.log_std_min, config.log_std_max)?;
        let ensemble = QEnsemble::new(
            spec.state_dim,
            spec.action_dim,
            &config.hidden,
            config.ensemble_size,
            &mut init,
        )?;
        let entropy = match config.entropy {
            EntropyMode::Fixed { beta } => EntropyCoefficient::fixed(beta)?,
            EntropyMode::Auto {
                initial_beta,
                target_entropy,
            } => EntropyCoefficient::auto(initial_beta, target_entropy, spec.action_dim, config.beta_lr)?,
        };
        let actor_optimizer = AdamState::new(policy.trunk(), AdamConfig::with_lr(config.actor_lr));
        let critic_optimizers = ensemble
            .members(Which::Online)
            .iter()
            .map(|m| AdamState::new(m, AdamConfig::with_lr(config.critic_lr)))
            .collect();
        Self::assemble(
            config,
            env,
            offline,
            seed,
            Checkpoint {
                fingerprint: String::new(),
                policy,
                ensemble,
                entropy,
                actor_optimizer,
                critic_optimizers,
            },
        )
    }

    /// Resumes from a checkpoint whose fingerprint must match `config`.
    pub fn from_checkpoint(
        config: So2Config,
        env: Box<dyn Env>,
        offline: ReplayBuffer,
        seed: u64,
        checkpoint: Checkpoint,
    ) -> Result<Self> {
        config.validate()?;
        let spec = env.spec();
        checkpoint.expect_fingerprint(&network_fingerprint(
            spec.state_dim,
            spec.action_dim,
            &config.hidden,
            config.ensemble_size,
        ))?;
        let mut checkpoint = checkpoint;
        // Optimizer hyperparameters follow the current config; moments carry over.
        checkpoint.actor_optimizer.config = AdamConfig::with_lr(config.actor_lr);
        for opt in &mut checkpoint.critic_optimizers {
            opt.config = AdamConfig::with_lr(config.critic_lr);
        }
        if let EntropyCoefficient::Auto { optimizer, .. } = &mut checkpoint.entropy {
            optimizer.config = AdamConfig::with_lr(config.beta_lr);
        }
        Self::assemble(config, env, offline, seed, checkpoint)
    }

    fn assemble(
        config: So2Config,
        mut env: Box<dyn Env>,
        offline: ReplayBuffer,
        seed: u64,
        ck: Checkpoint,
    ) -> Result<Self> {
        let spec = env.spec();
        if offline.state_dim() != spec.state_dim || offline.action_dim() != spec.action_dim {
            return Err(Error::Dimension {
                what: format!("offline dataset for {}", spec.name),
                expected: spec.state_dim,
                got: offline.state_dim(),
            });
        }
        if ck.critic_optimizers.len() != ck.ensemble.len() {
            return Err(Error::Dimension {
                what: "critic optimizers".into(),
                expected: ck.ensemble.len(),
                got: ck.critic_optimizers.len(),
            });
        }
        let online = ReplayBuffer::new(spec.state_dim, spec.action_dim, config.online_capacity)?;
        let mut rngs = Rngs::new(seed);
        let obs = env.reset(rngs.collection.next_u64());
        Ok(Self {
            config,
            policy: ck.policy,
            ensemble: ck.ensemble,
            entropy: ck.entropy,
            actor_optimizer: ck.actor_optimizer,
            critic_optimizers: ck.critic_optimizers,
            offline,
            online,
            rngs,
            counters: Counters::default(),
            env,
            obs,
            episode_return: 0.0,
        })
    }

    pub fn fingerprint(&self) -> String {
        network_fingerprint(
            self.ensemble.state_dim(),
            self.ensemble.action_dim(),
            &self.config.hidden,
            self.ensemble.len(),
        )
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            fingerprint: self.fingerprint(),
            policy: self.policy.clone(),
            ensemble: self.ensemble.clone(),
            entropy: self.entropy.clone(),
            actor_optimizer: self.actor_optimizer.clone(),
            critic_optimizers: self.critic_optimizers.clone(),
        }
    }

    pub fn env(&self) -> &dyn Env {
        self.env.as_ref()
    }

    fn target_params(&self, sigma: f64, mode: TargetMode) -> TargetParams {
        TargetParams {
            gamma: self.config.gamma,
            sigma,
            clip: self.config.clip,
            beta: self.entropy.beta(),
            mode,
        }
    }

    /// One iteration of the update loop: sample a union batch, update critics,
    /// optionally update the actor, then move the targets.
    pub fn update_iteration(
        &mut self,
        sigma: f64,
        mode: TargetMode,
        with_actor: bool,
    ) -> Result<UpdateMetrics> {
        let batch = sample_union(
            &self.offline,
            &self.online,
            self.config.batch_size,
            &mut self.rngs.batch,
        )?;
        let params = self.target_params(sigma, mode);
        let targets = compute_target(
            &batch,
            &self.ensemble,
            &self.policy,
            &params,
            &mut self.rngs.batch,
            &mut self.rngs.perturbation,
        )?;
        let critic_loss = critic_step(
            &mut self.ensemble,
            &mut self.critic_optimizers,
            &batch,
            &targets,
        )?;
        self.counters.critic_updates += 1;
        let actor_objective = if with_actor {
            let obj = actor_step(
                &mut self.policy,
                &mut self.actor_optimizer,
                &self.ensemble,
                &mut self.entropy,
                &batch.states,
                batch.len(),
                &mut self.rngs.batch,
            )?;
            self.counters.actor_updates += 1;
            Some(obj)
        } else {
            None
        };
        self.ensemble.polyak_update(self.config.rho)?;
        self.counters.polyak_updates += 1;
        self.counters.grad_steps += 1;
        Ok(UpdateMetrics {
            critic_loss,
            actor_objective,
            online_fraction: batch.online_fraction(),
        })
    }

    /// Collects one transition with the behavior policy into the online buffer.
    /// Returns the episode return when this step ended an episode.
    pub fn collect(&mut self) -> Result<Option<f64>> {
        let action = if self.counters.env_steps < self.config.random_steps {
            (0..self.policy.action_dim())
                .map(|_| self.rngs.collection.random_range(-1.0..=1.0))
                .collect()
        } else {
            self.policy.sample(&self.obs, &mut self.rngs.collection)?.0
        };
        let step = self.env.step(&action)?;
        self.online.push(Transition {
            state: std::mem::take(&mut self.obs),
            action,
            reward: step.reward,
            next_state: step.state.clone(),
            done: step.terminated,
        })?;
        self.counters.env_steps += 1;
        self.episode_return += step.reward;
        if step.episode_over() {
            let ret = self.episode_return;
            self.episode_return = 0.0;
            self.counters.episodes += 1;
            self.obs = self.env.reset(self.rngs.collection.next_u64());
            Ok(Some(ret))
        } else {
            self.obs = step.state;
            Ok(None)
        }
    }

    /// One outer iteration of the finetuning loop: collect a single
    /// transition, then `n_upc` critic updates with `policy_upc` interleaved
    /// actor updates and a Polyak update after each.
    pub fn finetune_epoch(&mut self) -> Result<EpochMetrics> {
        let epoch = self.counters.env_steps;
        let wrap = |e: Error| Error::Epoch {
            epoch,
            source: Box::new(e),
        };
        let episode_return = self.collect().map_err(wrap)?;
        let (sigma, mode) = (self.config.sigma, self.config.target_mode);
        let mut critic_loss = 0.0;
        let mut actor_sum = 0.0;
        let mut actor_n = 0usize;
        let mut online_fraction = 0.0;
        for i in 0..self.config.n_upc {
            let due = self.config.actor_update_due(i);
            let m = self.update_iteration(sigma, mode, due).map_err(wrap)?;
            critic_loss += m.critic_loss;
            online_fraction += m.online_fraction;
            if let Some(obj) = m.actor_objective {
                actor_sum += obj;
                actor_n += 1;
            }
        }
        let n = self.config.n_upc as f64;
        Ok(EpochMetrics {
            env_step: self.counters.env_steps,
            critic_loss: critic_loss / n,
            actor_objective: if actor_n > 0 {
                actor_sum / actor_n as f64
            } else {
                f64::NAN
            },
            beta: self.entropy.beta(),
            online_fraction: online_fraction / n,
            offline_size: self.offline.len(),
            online_size: self.online.len(),
            episode_return,
        })
    }

    /// One offline iteration: no target perturbation, ensemble-minimum
    /// targets, batches from the offline buffer alone.
    pub fn pretrain_step(&mut self) -> Result<UpdateMetrics> {
        if self.offline.is_empty() {
            return Err(Error::InvalidArgument("pretraining needs a nonempty dataset".into()));
        }
        if !self.online.is_empty() {
            return Err(Error::InvalidArgument(
                "pretraining must not see online transitions".into(),
            ));
        }
        self.update_iteration(0.0, TargetMode::MinEnsemble, true)
    }
}

/// Offline pretraining from a freshly initialized state.
pub fn pretrain(
    dataset: ReplayBuffer,
    steps: u64,
    config: So2Config,
    env: Box<dyn Env>,
    seed: u64,
) -> Result<TrainState> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("pretraining needs a nonempty dataset".into()));
    }
    let mut state = TrainState::new(config, env, dataset, seed)?;
    for _ in 0..steps {
        state.pretrain_step()?;
    }
    Ok(state)
}

/// Undiscounted return of one mean-action episode started from `seed`.
pub fn episode_return(policy: &SquashedGaussianPolicy, env: &mut dyn Env, seed: u64) -> Result<f64> {
    let mut s = env.reset(seed);
    let mut total = 0.0;
    loop {
        let a = policy.mean_action(&s)?;
        let step = env.step(&a)?;
        total += step.reward;
        if step.episode_over() {
            return Ok(total);
        }
        s = step.state;
    }
}

/// Mean and population std of mean-action returns; episode `i` resets with
/// seed `seed + i`.
pub fn evaluate(
    policy: &SquashedGaussianPolicy,
    env: &mut dyn Env,
    episodes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("evaluate needs at least one episode".into()));
    }
    let returns = (0..episodes)
        .map(|i| episode_return(policy, env, seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_std(&returns))
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
