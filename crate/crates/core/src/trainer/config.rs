use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetMode {
    /// One shared target per row, bootstrapped from the minimum over target critics.
    MinEnsemble,
    /// Member `i` regresses onto a target built from its own target network.
    Independent,
}

impl TargetMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetMode::MinEnsemble => "min-ensemble",
            TargetMode::Independent => "independent",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "min-ensemble" | "min_ensemble" => Ok(TargetMode::MinEnsemble),
            "independent" => Ok(TargetMode::Independent),
            other => Err(Error::InvalidArgument(format!(
                "unknown target mode `{other}` (expected min-ensemble or independent)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EntropyMode {
    Fixed { beta: f64 },
    /// `target_entropy: None` means `-action_dim`.
    Auto {
        initial_beta: f64,
        target_entropy: Option<f64>,
    },
}

/// Hyperparameters of pretraining and finetuning.
#[derive(Debug, Clone, PartialEq)]
pub struct So2Config {
    pub gamma: f64,
    /// Fraction of the old target kept at each Polyak update.
    pub rho: f64,
    /// Std of the target-action perturbation; 0 disables it.
    pub sigma: f64,
    /// Perturbation clip bound.
    pub clip: f64,
    /// Critic updates per collected transition.
    pub n_upc: usize,
    /// Actor updates per collected transition, spread evenly over the critic updates.
    pub policy_upc: usize,
    pub batch_size: usize,
    pub ensemble_size: usize,
    pub target_mode: TargetMode,
    pub entropy: EntropyMode,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub beta_lr: f64,
    pub hidden: Vec<usize>,
    pub log_std_min: f64,
    pub log_std_max: f64,
    /// Uniformly random behavior actions for the first this-many environment steps.
    pub random_steps: u64,
    pub online_capacity: usize,
    pub total_env_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
}

impl Default for So2Config {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            rho: 0.995,
            sigma: 0.3,
            clip: 0.6,
            n_upc: 10,
            policy_upc: 10,
            batch_size: 256,
            ensemble_size: 10,
            target_mode: TargetMode::MinEnsemble,
            entropy: EntropyMode::Auto {
                initial_beta: 1.0,
                target_entropy: None,
            },
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            beta_lr: 3e-4,
            hidden: vec![256, 256],
            log_std_min: crate::actor_critic::LOG_STD_MIN,
            log_std_max: crate::actor_critic::LOG_STD_MAX,
            random_steps: 0,
            online_capacity: 1_000_000,
            total_env_steps: 100_000,
            eval_interval: 1000,
            eval_episodes: 10,
        }
    }
}

impl So2Config {
    /// Small networks and ensembles sized for the built-in toy environments on
    /// a single CPU core. Algorithmic defaults (sigma, clip, N_upc, gamma, rho)
    /// are unchanged.
    pub fn desk() -> Self {
        Self {
            batch_size: 64,
            ensemble_size: 2,
            hidden: vec![32, 32],
            entropy: EntropyMode::Auto {
                initial_beta: 0.1,
                target_entropy: None,
            },
            rho: 0.995,
            eval_interval: 1000,
            eval_episodes: 5,
            total_env_steps: 10_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho {} outside [0, 1]", self.rho));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return bad(format!("sigma must be >= 0, got {}", self.sigma));
        }
        if !(self.clip > 0.0) {
            return bad(format!("clip must be > 0, got {}", self.clip));
        }
        if self.n_upc == 0 {
            return bad("n_upc must be >= 1".into());
        }
        if self.policy_upc == 0 || self.policy_upc > self.n_upc {
            return bad(format!(
                "policy_upc must be in [1, n_upc={}], got {}",
                self.n_upc, self.policy_upc
            ));
        }
        if self.batch_size == 0 || self.ensemble_size == 0 {
            return bad("batch_size and ensemble_size must be >= 1".into());
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden widths must be > 0".into());
        }
        for (name, lr) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("beta_lr", self.beta_lr),
        ] {
            if !(lr > 0.0) {
                return bad(format!("{name} must be > 0, got {lr}"));
            }
        }
        if self.online_capacity == 0 || self.eval_episodes == 0 {
            return bad("online_capacity and eval_episodes must be >= 1".into());
        }
        match self.entropy {
            EntropyMode::Fixed { beta } if !(beta >= 0.0) => {
                bad(format!("fixed beta must be >= 0, got {beta}"))
            }
            EntropyMode::Auto { initial_beta, .. } if !(initial_beta > 0.0) => {
                bad(format!("initial beta must be > 0, got {initial_beta}"))
            }
            _ => Ok(()),
        }
    }

    /// Whether the actor is updated at critic iteration `i` (0-based) of one
    /// collection step: `policy_upc` updates spread evenly over `n_upc`.
    pub fn actor_update_due(&self, i: usize) -> bool {
        (i + 1) * self.policy_upc / self.n_upc > i * self.policy_upc / self.n_upc
    }
}
