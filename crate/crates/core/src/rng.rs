//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own ChaCha stream derived from
//! the run seed, so toggling one source (e.g. target-action noise) never shifts
//! the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RngStream = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    /// Network weight initialization.
    Init = 0,
    /// Environment interaction: behavior-policy noise and episode reset seeds.
    Collection = 1,
    /// Mini-batch indices plus policy noise used inside updates.
    Batch = 2,
    /// Target-action perturbation.
    Perturbation = 3,
    /// Diagnostics and dataset rollouts.
    Rollout = 4,
}

pub fn stream(seed: u64, purpose: Purpose) -> RngStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}
