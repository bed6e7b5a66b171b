mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use so2_core::actor_critic::{EntropyCoefficient, QEnsemble, SquashedGaussianPolicy, Which};
use so2_core::envs::{ConstantEnv, Env, PointMassEnv};
use so2_core::nn::{Activation, AdamConfig, AdamState, Dense, Mlp};
use so2_core::replay::{ReplayBuffer, Transition};
use so2_core::trainer::{
    actor_step, compute_target, critic_step, episode_return, evaluate, pretrain, So2Config,
    TargetMode, TargetParams, Targets, TrainState,
};

fn random_dataset(env: &mut dyn Env, size: usize, seed: u64) -> ReplayBuffer {
    let spec = env.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = ReplayBuffer::new(spec.state_dim, spec.action_dim, size).unwrap();
    let mut s = env.reset(seed);
    while buf.len() < size {
        let a: Vec<f64> = (0..spec.action_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let step = env.step(&a).unwrap();
        buf.push(Transition {
            state: s,
            action: a,
            reward: step.reward,
            next_state: step.state.clone(),
            done: step.terminated,
        })
        .unwrap();
        s = if step.episode_over() { env.reset(rng.random()) } else { step.state };
    }
    buf
}

fn tiny_config() -> So2Config {
    So2Config {
        batch_size: 16,
        ensemble_size: 3,
        hidden: vec![8],
        ..So2Config::desk()
    }
}

/// Piecewise-linear interpolant of `-(a - 0.5)^2` on knots every 0.25 over
/// [-1, 1], as a relu network of `(s, a)`; its maximum is exactly at a = 0.5.
fn quadratic_critic() -> Mlp {
    let f = |a: f64| -(a - 0.5) * (a - 0.5);
    let knots: Vec<f64> = (0..8).map(|k| -1.0 + 0.25 * k as f64).collect();
    let slopes: Vec<f64> = knots.iter().map(|&k| (f(k + 0.25) - f(k)) / 0.25).collect();
    let n = knots.len();
    let mut w1 = Vec::new();
    let mut b1 = Vec::new();
    for &k in &knots {
        w1.extend([0.0, 1.0]);
        b1.push(-k);
    }
    let mut w2 = vec![slopes[0]];
    for i in 1..n {
        w2.push(slopes[i] - slopes[i - 1]);
    }
    Mlp::from_layers(vec![
        Dense::new(2, n, Activation::Relu, w1, b1).unwrap(),
        Dense::new(n, 1, Activation::Identity, w2, vec![f(-1.0)]).unwrap(),
    ])
    .unwrap()
}

fn flat_critic(sd: usize, ad: usize) -> Mlp {
    Mlp::from_layers(vec![Dense::new(sd + ad, 1, Activation::Identity, vec![0.0; sd + ad], vec![1.5]).unwrap()])
        .unwrap()
}

#[test]
fn quadratic_critic_interpolates() {
    let q = quadratic_critic();
    for a in [-1.0, -0.5, 0.0, 0.25, 0.5, 0.75, 1.0] {
        let v = q.forward(&[0.3, a]).unwrap()[0];
        assert!((v + (a - 0.5) * (a - 0.5)).abs() < 1e-12, "a={a} v={v}");
    }
}

#[test]
fn reduces_to_plain_sac_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..50 {
        let (sd, ad) = (3, 2);
        let policy = SquashedGaussianPolicy::new(sd, ad, &[6, 6], &mut rng).unwrap();
        let online = QEnsemble::new(sd, ad, &[6], 1, &mut rng).unwrap();
        let target = QEnsemble::new(sd, ad, &[6], 1, &mut rng).unwrap();
        let ens = QEnsemble::from_members(
            online.members(Which::Online).to_vec(),
            target.members(Which::Online).to_vec(),
            sd,
            ad,
        )
        .unwrap();
        let batch = common::random_batch(&mut rng, 32, sd, ad);
        let beta = rng.random_range(0.0..0.5);
        let seed = rng.random();
        for mode in [TargetMode::MinEnsemble, TargetMode::Independent] {
            let params = TargetParams { gamma: 0.99, sigma: 0.0, clip: 0.6, beta, mode };
            let mut p_rng = ChaCha8Rng::seed_from_u64(seed);
            let mut n_rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let got = compute_target(&batch, &ens, &policy, &params, &mut p_rng, &mut n_rng).unwrap();
            let expected = common::plain_sac_target(
                &batch,
                &ens.members(Which::Target)[0],
                &policy,
                0.99,
                beta,
                &mut ChaCha8Rng::seed_from_u64(seed),
            );
            for (g, e) in got.for_member(0).iter().zip(&expected) {
                assert!((g - e).abs() <= 1e-12, "trial {trial}: {g} vs {e}");
            }
        }
    }
}

#[test]
fn critic_step_never_touches_actor_or_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let policy = SquashedGaussianPolicy::new(3, 1, &[8], &mut rng).unwrap();
    let mut ens = QEnsemble::new(3, 1, &[8], 3, &mut rng).unwrap();
    let batch = common::random_batch(&mut rng, 16, 3, 1);
    let params = TargetParams { gamma: 0.99, sigma: 0.3, clip: 0.6, beta: 0.1, mode: TargetMode::MinEnsemble };
    let targets = compute_target(&batch, &ens, &policy, &params, &mut rng.clone(), &mut rng).unwrap();
    let policy_before = policy.clone();
    let target_before: Vec<u64> = common::target_params(&ens).iter().map(|v| v.to_bits()).collect();
    let online_before = common::online_params(&ens);
    let mut opts: Vec<AdamState> = ens
        .members(Which::Online)
        .iter()
        .map(|m| AdamState::new(m, AdamConfig::default()))
        .collect();
    critic_step(&mut ens, &mut opts, &batch, &targets).unwrap();
    assert_eq!(policy, policy_before);
    let target_after: Vec<u64> = common::target_params(&ens).iter().map(|v| v.to_bits()).collect();
    assert_eq!(target_after, target_before);
    assert_ne!(common::online_params(&ens), online_before);
}

#[test]
fn critic_loss_decreases_on_frozen_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ens = QEnsemble::new(3, 1, &[16, 16], 2, &mut rng).unwrap();
    let batch = common::random_batch(&mut rng, 32, 3, 1);
    let targets = Targets::Shared(batch.rewards.clone());
    let mut opts: Vec<AdamState> = ens
        .members(Which::Online)
        .iter()
        .map(|m| AdamState::new(m, AdamConfig::with_lr(3e-4)))
        .collect();
    let mut last = f64::INFINITY;
    for step in 0..50 {
        let loss = critic_step(&mut ens, &mut opts, &batch, &targets).unwrap();
        assert!(loss < last, "step {step}: {loss} >= {last}");
        last = loss;
    }
}

#[test]
fn actor_converges_to_critic_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut policy = SquashedGaussianPolicy::new(1, 1, &[16], &mut rng).unwrap();
    let q = quadratic_critic();
    let ens = QEnsemble::from_members(vec![q.clone()], vec![q], 1, 1).unwrap();
    let mut entropy = EntropyCoefficient::fixed(0.0).unwrap();
    let mut opt = AdamState::new(policy.trunk(), AdamConfig::with_lr(3e-3));
    for _ in 0..500 {
        let states: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        actor_step(&mut policy, &mut opt, &ens, &mut entropy, &states, 32, &mut rng).unwrap();
    }
    let mean: f64 = (0..100)
        .map(|i| policy.mean_action(&[-1.0 + 0.02 * i as f64]).unwrap()[0])
        .sum::<f64>()
        / 100.0;
    assert!((mean - 0.5).abs() <= 0.05, "mean action {mean}");
}

#[test]
fn flat_critic_without_entropy_gives_no_signal() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut policy = SquashedGaussianPolicy::new(2, 1, &[8], &mut rng).unwrap();
    let c = flat_critic(2, 1);
    let ens = QEnsemble::from_members(vec![c.clone(), c.clone()], vec![c.clone(), c], 2, 1).unwrap();
    let before = policy.clone();
    let mut entropy = EntropyCoefficient::fixed(0.0).unwrap();
    let mut opt = AdamState::new(policy.trunk(), AdamConfig::default());
    let states: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
    let obj = actor_step(&mut policy, &mut opt, &ens, &mut entropy, &states, 10, &mut rng).unwrap();
    assert_eq!(obj, 1.5);
    assert_eq!(policy, before);
}

/// Entropy of `tanh(N(0, exp(ls)^2))` including the 1e-6 guard, by midpoint
/// quadrature over the noise.
fn squashed_entropy(ls: f64) -> f64 {
    let n = 4000;
    (0..n)
        .map(|i| {
            let x = -8.0 + 16.0 * (i as f64 + 0.5) / n as f64;
            let w = (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt() * 16.0 / n as f64;
            let a = (ls.exp() * x).tanh();
            w * (x * x / 2.0 + ls + 0.5 * (2.0 * std::f64::consts::PI).ln() + (1.0 - a * a + 1e-6).ln())
        })
        .sum()
}

#[test]
fn entropy_dominance_raises_log_std() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut policy = SquashedGaussianPolicy::new(2, 1, &[8], &mut rng).unwrap();
    let last = policy.trunk_mut().layers_mut().last_mut().unwrap();
    last.bias_mut()[1] = -3.0;
    let c = flat_critic(2, 1);
    let ens = QEnsemble::from_members(vec![c.clone()], vec![c], 2, 1).unwrap();
    let mut entropy = EntropyCoefficient::fixed(1e3).unwrap();
    let mut opt = AdamState::new(policy.trunk(), AdamConfig::with_lr(1e-2));
    let probe = [0.2, -0.4];
    let start = policy.head(&probe).unwrap().1[0];
    for _ in 0..300 {
        let states: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        actor_step(&mut policy, &mut opt, &ens, &mut entropy, &states, 16, &mut rng).unwrap();
    }
    let end = policy.head(&probe).unwrap().1[0];
    assert!(end > start + 2.0, "log_std {start} -> {end}");
    // The squash caps the entropy, so the ascent settles on the
    // entropy-maximizing scale rather than the clamp.
    let best = (0..500)
        .map(|i| -3.0 + 0.01 * i as f64)
        .max_by(|a, b| squashed_entropy(*a).total_cmp(&squashed_entropy(*b)))
        .unwrap();
    assert!((end - best).abs() < 0.15, "log_std {end}, entropy maximizer {best}");
}

#[test]
fn loop_accounting() {
    let mut env = PointMassEnv::new();
    let data = random_dataset(&mut env, 200, 1);
    for (n_upc, policy_upc) in [(1, 1), (10, 10), (10, 1), (10, 3)] {
        let cfg = So2Config { n_upc, policy_upc, ..tiny_config() };
        let ensemble = cfg.ensemble_size as u64;
        let mut st = TrainState::new(cfg, Box::new(PointMassEnv::new()), data.clone(), 3).unwrap();
        for step in 1..=5u64 {
            st.finetune_epoch().unwrap();
            let c = st.counters;
            assert_eq!(c.env_steps, step);
            assert_eq!(c.critic_updates, step * n_upc as u64);
            assert_eq!(c.polyak_updates, step * n_upc as u64);
            assert_eq!(c.actor_updates, step * policy_upc as u64);
            assert_eq!(st.online.len() as u64, step);
            let member_steps: u64 = st.critic_optimizers.iter().map(|o| o.t).sum();
            assert_eq!(member_steps, step * n_upc as u64 * ensemble);
            assert_eq!(st.actor_optimizer.t, step * policy_upc as u64);
        }
    }
}

#[test]
fn pretrain_zero_steps_is_fresh_and_runs_are_deterministic() {
    let mut env = PointMassEnv::new();
    let data = random_dataset(&mut env, 300, 2);
    let cfg = tiny_config();
    let fresh = TrainState::new(cfg.clone(), Box::new(PointMassEnv::new()), data.clone(), 9).unwrap();
    let zero = pretrain(data.clone(), 0, cfg.clone(), Box::new(PointMassEnv::new()), 9).unwrap();
    assert_eq!(zero.checkpoint().to_bytes(), fresh.checkpoint().to_bytes());

    let a = pretrain(data.clone(), 40, cfg.clone(), Box::new(PointMassEnv::new()), 9).unwrap();
    let b = pretrain(data.clone(), 40, cfg.clone(), Box::new(PointMassEnv::new()), 9).unwrap();
    assert_eq!(a.checkpoint().to_bytes(), b.checkpoint().to_bytes());
    assert_ne!(a.checkpoint().to_bytes(), fresh.checkpoint().to_bytes());
    assert_eq!(a.counters.polyak_updates, 40);
    assert!(a.online.is_empty());

    let empty = ReplayBuffer::new(4, 2, 1).unwrap();
    assert!(pretrain(empty, 1, cfg, Box::new(PointMassEnv::new()), 0).is_err());
}

#[test]
fn finetune_resumes_deterministically_from_checkpoint() {
    let mut env = PointMassEnv::new();
    let data = random_dataset(&mut env, 300, 3);
    let cfg = tiny_config();
    let pre = pretrain(data.clone(), 20, cfg.clone(), Box::new(PointMassEnv::new()), 1).unwrap();
    let ck = pre.checkpoint();
    let run = || {
        let mut st =
            TrainState::from_checkpoint(cfg.clone(), Box::new(PointMassEnv::new()), data.clone(), 5, ck.clone())
                .unwrap();
        let metrics: Vec<_> = (0..30).map(|_| st.finetune_epoch().unwrap()).collect();
        (st.checkpoint().to_bytes(), format!("{metrics:?}"))
    };
    assert_eq!(run(), run());

    let other = So2Config { hidden: vec![9], ..cfg };
    let err = TrainState::from_checkpoint(other, Box::new(PointMassEnv::new()), data, 5, ck).err().expect("fingerprint mismatch");
    assert_eq!(err.category(), "fingerprint");
}

#[test]
fn evaluate_constant_env_and_hand_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let policy = SquashedGaussianPolicy::new(1, 1, &[4], &mut rng).unwrap();
    let mut env = ConstantEnv::new();
    for episodes in [1, 3, 7] {
        assert_eq!(evaluate(&policy, &mut env, episodes, 12).unwrap(), (10.0, 0.0));
    }

    let policy = SquashedGaussianPolicy::new(4, 2, &[8], &mut rng).unwrap();
    let mut env = PointMassEnv::new();
    let (mean, std) = evaluate(&policy, &mut env, 3, 40).unwrap();
    assert_eq!(evaluate(&policy, &mut env, 3, 40).unwrap(), (mean, std));
    let mut returns = Vec::new();
    for i in 0..3u64 {
        let mut s = env.reset(40 + i);
        let mut total = 0.0;
        loop {
            let a = policy.mean_action(&s).unwrap();
            let step = env.step(&a).unwrap();
            total += step.reward;
            if step.truncated || step.terminated {
                break;
            }
            s = step.state;
        }
        returns.push(total);
    }
    let m = returns.iter().sum::<f64>() / 3.0;
    assert!((mean - m).abs() < 1e-9);
    assert_eq!(episode_return(&policy, &mut env, 40).unwrap(), returns[0]);
    assert!(evaluate(&policy, &mut env, 0, 1).is_err());
}

#[test]
fn polyak_contraction() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let online = QEnsemble::new(3, 2, &[8, 8], 2, &mut rng).unwrap();
    let target = QEnsemble::new(3, 2, &[8, 8], 2, &mut rng).unwrap();
    let mut ens = QEnsemble::from_members(
        online.members(Which::Online).to_vec(),
        target.members(Which::Online).to_vec(),
        3,
        2,
    )
    .unwrap();
    let gap = |e: &QEnsemble| -> Vec<f64> {
        common::target_params(e)
            .iter()
            .zip(common::online_params(e))
            .map(|(t, o)| t - o)
            .collect()
    };
    let initial = gap(&ens);
    for _ in 0..10 {
        ens.polyak_update(0.5).unwrap();
    }
    let factor = 0.5f64.powi(10);
    for (after, before) in gap(&ens).iter().zip(&initial) {
        assert!((after - factor * before).abs() < 1e-10);
    }
}

#[test]
fn policy_actions_stay_in_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut count = 0;
    for _ in 0..10 {
        let p = SquashedGaussianPolicy::new(3, 2, &[16, 16], &mut rng).unwrap();
        let states: Vec<f64> = (0..10_000 * 3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b = p.sample_batch(&states, 10_000, &mut rng).unwrap();
        assert!(b.actions.iter().all(|a| a.abs() < 1.0));
        count += b.actions.len() / 2;
    }
    assert_eq!(count, 100_000);
}
