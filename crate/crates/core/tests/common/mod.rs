#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use so2_core::actor_critic::{QEnsemble, SquashedGaussianPolicy, Which};
use so2_core::nn::{finite_diff_grad, Activation, Mlp};
use so2_core::replay::{Batch, Transition};

/// Max relative error between backprop and central differences for one
/// random network, input and output weighting drawn from `seed`.
pub fn gradient_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(1..=3);
    let mut sizes = vec![rng.random_range(1..=6)];
    for _ in 0..depth {
        sizes.push(rng.random_range(1..=8));
    }
    sizes.push(rng.random_range(1..=3));
    let hidden = if rng.random_bool(0.5) {
        Activation::Tanh
    } else {
        Activation::Relu
    };
    let out_act = if rng.random_bool(0.5) {
        Activation::Identity
    } else {
        Activation::Tanh
    };
    let net = Mlp::new(&sizes, hidden, out_act, &mut rng).unwrap();
    let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
    let c: Vec<f64> = (0..net.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = |m: &Mlp| -> f64 {
        m.forward(&x)
            .unwrap()
            .iter()
            .zip(&c)
            .map(|(o, w)| o * w)
            .sum()
    };
    let analytic = net.backward(&x, &c).unwrap();
    let numeric = finite_diff_grad(loss, &net, 1e-6);
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.blocks().iter().zip(numeric.blocks()) {
        for (ga, gn) in a.iter().zip(n) {
            let err = (ga - gn).abs() / ga.abs().max(gn.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

/// O(n^2) tau-b from integer pair counts.
pub fn kendall_brute(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut c, mut d, mut tx, mut ty) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i].partial_cmp(&x[j]).unwrap();
            let dy = y[i].partial_cmp(&y[j]).unwrap();
            use std::cmp::Ordering::Equal;
            match (dx, dy) {
                (Equal, Equal) => {}
                (Equal, _) => tx += 1,
                (_, Equal) => ty += 1,
                _ if dx == dy => c += 1,
                _ => d += 1,
            }
        }
    }
    let (ux, uy) = (c + d + ty, c + d + tx);
    if ux == 0 || uy == 0 {
        return None;
    }
    Some((c as i128 - d as i128) as f64 / ((ux as u128 * uy as u128) as f64).sqrt())
}

/// Vanilla soft actor-critic target with one critic, written directly from
/// the squashed-Gaussian definitions.
pub fn plain_sac_target(
    batch: &Batch,
    critic: &Mlp,
    policy: &SquashedGaussianPolicy,
    gamma: f64,
    beta: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let (sd, ad) = (batch.state_dim, batch.action_dim);
    let (lo, hi) = policy.log_std_range();
    let noise: Vec<f64> = (0..batch.len() * ad).map(|_| rng.sample(StandardNormal)).collect();
    (0..batch.len())
        .map(|n| {
            let s2 = &batch.next_states[n * sd..(n + 1) * sd];
            let out = policy.trunk().forward(s2).unwrap();
            let mut action = Vec::new();
            let mut logp = 0.0;
            for k in 0..ad {
                let xi = noise[n * ad + k];
                let ls = out[ad + k].max(lo).min(hi);
                let a = (out[k] + ls.exp() * xi).tanh();
                logp += -xi * xi / 2.0 - ls - (2.0 * std::f64::consts::PI).ln() / 2.0
                    - (1.0 - a * a + 1e-6).ln();
                action.push(a);
            }
            let mut x = s2.to_vec();
            x.extend(&action);
            let q = critic.forward(&x).unwrap()[0];
            let cont = if batch.dones[n] { 0.0 } else { 1.0 };
            batch.rewards[n] + gamma * cont * (q - beta * logp)
        })
        .collect()
}

pub fn random_batch(rng: &mut ChaCha8Rng, rows: usize, sd: usize, ad: usize) -> Batch {
    let ts: Vec<Transition> = (0..rows)
        .map(|_| Transition {
            state: (0..sd).map(|_| rng.random_range(-1.0..1.0)).collect(),
            action: (0..ad).map(|_| rng.random_range(-1.0..1.0)).collect(),
            reward: rng.random_range(-2.0..2.0),
            next_state: (0..sd).map(|_| rng.random_range(-1.0..1.0)).collect(),
            done: rng.random_bool(0.2),
        })
        .collect();
    Batch::from_transitions(sd, ad, &ts)
}

pub fn online_params(ens: &QEnsemble) -> Vec<f64> {
    flatten(ens.members(Which::Online))
}

pub fn target_params(ens: &QEnsemble) -> Vec<f64> {
    flatten(ens.members(Which::Target))
}

fn flatten(ms: &[Mlp]) -> Vec<f64> {
    ms.iter()
        .flat_map(|m| m.blocks().into_iter().flatten().copied().collect::<Vec<_>>())
        .collect()
}
