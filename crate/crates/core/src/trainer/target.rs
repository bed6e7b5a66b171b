//! Bellman targets with perturbed target actions.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::actor_critic::{QEnsemble, SquashedGaussianPolicy, Which};
use crate::error::{Error, Result};
use crate::replay::Batch;
use crate::trainer::TargetMode;

/// Noise for one target action: the raw Gaussian draw and its clipped value.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetNoise {
    pub raw: Vec<f64>,
    pub clipped: Vec<f64>,
}

/// `eps_d = clip(sigma * z_d, -clip, clip)` with `z_d` standard normal.
/// With `sigma == 0` no randomness is consumed.
pub fn draw_target_noise<R: Rng + ?Sized>(
    action_dim: usize,
    sigma: f64,
    clip: f64,
    rng: &mut R,
) -> TargetNoise {
    if sigma == 0.0 {
        return TargetNoise {
            raw: vec![0.0; action_dim],
            clipped: vec![0.0; action_dim],
        };
    }
    let raw: Vec<f64> = (0..action_dim)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let clipped = raw.iter().map(|e| e.clamp(-clip, clip)).collect();
    TargetNoise { raw, clipped }
}

/// Adds clipped noise to `action` then clamps the result into `[-1, 1]`.
pub fn perturb_action<R: Rng + ?Sized>(action: &[f64], sigma: f64, clip: f64, rng: &mut R) -> Vec<f64> {
    let noise = draw_target_noise(action.len(), sigma, clip, rng);
    apply_noise(action, &noise.clipped)
}

/// `clamp(action + eps, -1, 1)` per dimension.
pub fn apply_noise(action: &[f64], eps: &[f64]) -> Vec<f64> {
    action
        .iter()
        .zip(eps)
        .map(|(a, e)| (a + e).clamp(-1.0, 1.0))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetParams {
    pub gamma: f64,
    pub sigma: f64,
    pub clip: f64,
    pub beta: f64,
    pub mode: TargetMode,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Shared(Vec<f64>),
    /// `per_member[i][row]`.
    PerMember(Vec<Vec<f64>>),
}

impl Targets {
    pub fn for_member(&self, member: usize) -> &[f64] {
        match self {
            Targets::Shared(y) => y,
            Targets::PerMember(ys) => &ys[member],
        }
    }
}

/// Critic regression targets for `batch`.
///
/// Per row, draw `a' ~ pi(.|s')` (action_dim normals from `policy_rng`) and
/// keep `log pi(a'|s')` at the unperturbed action; then perturb `a'` with one
/// noise draw from `noise_rng`, shared by all members. Rows are processed in
/// order, so RNG consumption is: all policy noise for the batch, then all
/// perturbation noise.
pub fn compute_target<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    batch: &Batch,
    ensemble: &QEnsemble,
    policy: &SquashedGaussianPolicy,
    params: &TargetParams,
    policy_rng: &mut R1,
    noise_rng: &mut R2,
) -> Result<Targets> {
    let n = batch.len();
    let ad = batch.action_dim;
    let next = policy.sample_batch(&batch.next_states, n, policy_rng)?;
    let mut perturbed = Vec::with_capacity(n * ad);
    for row in next.actions.chunks_exact(ad) {
        perturbed.extend(perturb_action(row, params.sigma, params.clip, noise_rng));
    }
    let q = ensemble.q_values_batch(Which::Target, &batch.next_states, &perturbed, n)?;
    let bootstrap = |row: usize, q_next: f64| {
        let cont = if batch.dones[row] { 0.0 } else { 1.0 };
        batch.rewards[row]
            + params.gamma * cont * (q_next - params.beta * next.log_probs[row])
    };
    let check = |ys: &[f64]| {
        ys.iter()
            .position(|y| !y.is_finite())
            .map_or(Ok(()), |row| {
                Err(Error::NonFinite {
                    what: format!("critic target at batch row {row}"),
                })
            })
    };
    match params.mode {
        TargetMode::MinEnsemble => {
            let ys: Vec<f64> = (0..n)
                .map(|row| {
                    let q_min = q.iter().map(|m| m[row]).fold(f64::INFINITY, f64::min);
                    bootstrap(row, q_min)
                })
                .collect();
            check(&ys)?;
            Ok(Targets::Shared(ys))
        }
        TargetMode::Independent => {
            let ys: Vec<Vec<f64>> = q
                .iter()
                .map(|member| (0..n).map(|row| bootstrap(row, member[row])).collect())
                .collect();
            for y in &ys {
                check(y)?;
            }
            Ok(Targets::PerMember(ys))
        }
    }
}
