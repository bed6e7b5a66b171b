//! Pretraining and finetuning loops.
//!
//! Each collected transition is followed by `n_upc` critic updates. Critic
//! targets bootstrap from target networks evaluated at a noise-perturbed
//! next action, which smooths sharp Q-value peaks left by offline training.

mod config;
mod metrics;
mod state;
mod target;
mod update;

pub use config::{EntropyMode, So2Config, TargetMode};
pub use metrics::{MetricsRow, MetricsWriter, METRICS_COLUMNS, METRICS_VERSION_LINE};
pub use state::{
    episode_return, evaluate, mean_std, pretrain, Counters, EpochMetrics, Rngs, TrainState,
    UpdateMetrics,
};
pub use target::{
    apply_noise, compute_target, draw_target_noise, perturb_action, TargetNoise, TargetParams,
    Targets,
};
pub use update::{actor_step, critic_step};
