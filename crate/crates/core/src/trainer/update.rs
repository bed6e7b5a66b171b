//! Value and policy phases.

use rand::Rng;

use crate::actor_critic::{concat_rows, EntropyCoefficient, QEnsemble, SquashedGaussianPolicy};
use crate::error::{Error, Result};
use crate::nn::AdamState;
use crate::replay::Batch;
use crate::trainer::Targets;

/// One Adam step per online critic on `mean_n (Q_i(s_n, a_n) - y_{i,n})^2`.
/// Returns the loss averaged over members, measured before the step.
pub fn critic_step(
    ensemble: &mut QEnsemble,
    optimizers: &mut [AdamState],
    batch: &Batch,
    targets: &Targets,
) -> Result<f64> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::InvalidArgument("critic step on an empty batch".into()));
    }
    if optimizers.len() != ensemble.len() {
        return Err(Error::Dimension {
            what: "critic optimizers".into(),
            expected: ensemble.len(),
            got: optimizers.len(),
        });
    }
    let x = concat_rows(&batch.states, &batch.actions, batch.state_dim, batch.action_dim);
    let mut total = 0.0;
    for (i, (critic, opt)) in ensemble
        .online_mut()
        .iter_mut()
        .zip(optimizers.iter_mut())
        .enumerate()
    {
        let y = targets.for_member(i);
        let trace = critic.forward_batch(&x, n)?;
        let q = trace.output();
        let mut loss = 0.0;
        let upstream: Vec<f64> = q
            .iter()
            .zip(y)
            .map(|(q, y)| {
                let e = q - y;
                loss += e * e;
                2.0 * e / n as f64
            })
            .collect();
        loss /= n as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                what: format!("critic {i} loss"),
            });
        }
        let grads = critic.backward_batch(&trace, &upstream)?;
        opt.step(critic, &grads)?;
        total += loss;
    }
    Ok(total / ensemble.len() as f64)
}

/// One Adam ascent step on `mean_n [min_j Q_j(s_n, a~_n) - beta log pi(a~_n|s_n)]`
/// with reparametrized `a~`, critics frozen; then the entropy temperature
/// update. Returns the objective measured before the step.
pub fn actor_step<R: Rng + ?Sized>(
    policy: &mut SquashedGaussianPolicy,
    optimizer: &mut AdamState,
    ensemble: &QEnsemble,
    entropy: &mut EntropyCoefficient,
    states: &[f64],
    batch: usize,
    rng: &mut R,
) -> Result<f64> {
    if batch == 0 {
        return Err(Error::InvalidArgument("actor step on an empty batch".into()));
    }
    let sd = ensemble.state_dim();
    let ad = ensemble.action_dim();
    let beta = entropy.beta();
    let sample = policy.sample_batch(states, batch, rng)?;
    let x = concat_rows(states, &sample.actions, sd, ad);

    let critics = ensemble.members(crate::actor_critic::Which::Online);
    let traces = critics
        .iter()
        .map(|c| c.forward_batch(&x, batch))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    // argmin member per row; ties go to the lowest index
    let mut q_min = vec![f64::INFINITY; batch];
    let mut arg = vec![0usize; batch];
    for (j, t) in traces.iter().enumerate() {
        for (row, &q) in t.output().iter().enumerate() {
            if q < q_min[row] {
                q_min[row] = q;
                arg[row] = j;
            }
        }
    }
    let objective = q_min
        .iter()
        .zip(&sample.log_probs)
        .map(|(q, lp)| q - beta * lp)
        .sum::<f64>()
        / batch as f64;
    if !objective.is_finite() {
        return Err(Error::NonFinite {
            what: "actor objective".into(),
        });
    }

    // d(min Q)/da, routed through the minimizing member of each row
    let mut dq_da = vec![0.0; batch * ad];
    for (j, (critic, trace)) in critics.iter().zip(&traces).enumerate() {
        let upstream: Vec<f64> = arg.iter().map(|&a| if a == j { 1.0 } else { 0.0 }).collect();
        if upstream.iter().all(|&u| u == 0.0) {
            continue;
        }
        let g = critic.backward_batch(trace, &upstream)?;
        for row in 0..batch {
            if arg[row] == j {
                let src = &g.input[row * (sd + ad) + sd..(row + 1) * (sd + ad)];
                dq_da[row * ad..(row + 1) * ad].copy_from_slice(src);
            }
        }
    }

    // descend on the negated objective
    let scale = 1.0 / batch as f64;
    let action_grad: Vec<f64> = dq_da.iter().map(|g| -g * scale).collect();
    let logp_grad = vec![beta * scale; batch];
    let grads = policy.backward_sample(&sample, &action_grad, &logp_grad)?;
    optimizer.step(policy.trunk_mut(), &grads)?;
    entropy.update(&sample.log_probs)?;
    Ok(objective)
}
