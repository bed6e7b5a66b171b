//! Policy, critic ensemble, entropy temperature and their on-disk container.

mod checkpoint;
mod ensemble;
mod entropy;
mod policy;

pub use checkpoint::{network_fingerprint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use ensemble::{concat_rows, QEnsemble, Which};
pub use entropy::EntropyCoefficient;
pub use policy::{
    squashed_log_prob, PolicyBatch, SquashedGaussianPolicy, LOG_STD_MAX, LOG_STD_MIN, TANH_EPS,
};
