use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use so2_core::actor_critic::{network_fingerprint, Checkpoint, SquashedGaussianPolicy};
use so2_core::diagnostics::{
    windowed_kendall, DiagnoseOptions, DiagnosticMode, EnsembleEstimator, OracleCritic,
    QEstimate, QualityReport,
};
use so2_core::envs::{generate_dataset, make_env, Env};
use so2_core::replay::{load_dataset_for, save_dataset, ReplayBuffer};
use so2_core::rng::{stream, Purpose};
use so2_core::trainer::{evaluate, MetricsRow, MetricsWriter, TrainState};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const SNAPSHOT_FILE: &str = "resolved.conf";
pub const DATASET_FILE: &str = "dataset.o2od";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EVALUATE_FILE: &str = "evaluate.csv";
pub const REPORT_FILE: &str = "report.txt";
pub const COMPARISON_FILE: &str = "comparison.txt";

/// Evaluation episodes during training reset from `seed + EVAL_SEED_OFFSET`,
/// away from the seeds used for collection.
pub const EVAL_SEED_OFFSET: u64 = 1_000_003;

/// Creates the output directory and writes the resolved snapshot there.
fn prepare(cfg: &RunConfig) -> CliResult<PathBuf> {
    let out = cfg.out_dir();
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let snap = out.join(SNAPSHOT_FILE);
    fs::write(&snap, cfg.to_text()).map_err(|e| CliError::io(&snap, e))?;
    Ok(out)
}

fn env_of(cfg: &RunConfig) -> CliResult<Box<dyn Env>> {
    Ok(make_env(cfg.get("run.env"))?)
}

fn require(cfg: &RunConfig, key: &str, flag: &str) -> CliResult<PathBuf> {
    cfg.path(key)
        .ok_or_else(|| CliError::invalid(format!("missing {flag} (config key {key})")))
}

fn load_checkpoint_for(path: &Path, env: &dyn Env) -> CliResult<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    let spec = env.spec();
    let policy = &ck.policy;
    if policy.state_dim() != spec.state_dim || policy.action_dim() != spec.action_dim {
        return Err(CliError::new(
            "dimension",
            format!(
                "{}: checkpoint is for state/action dims {}/{}, env {} has {}/{}",
                path.display(),
                policy.state_dim(),
                policy.action_dim(),
                spec.name,
                spec.state_dim,
                spec.action_dim
            ),
        ));
    }
    Ok(ck)
}

fn load_dataset_or_empty(cfg: &RunConfig, env: &dyn Env) -> CliResult<ReplayBuffer> {
    let spec = env.spec();
    match cfg.path("data.path") {
        Some(p) => Ok(load_dataset_for(&p, spec.state_dim, spec.action_dim)?),
        None => Ok(ReplayBuffer::new(spec.state_dim, spec.action_dim, 1)?),
    }
}

pub fn gen_data(cfg: &RunConfig) -> CliResult<()> {
    let out = prepare(cfg)?;
    let env = env_of(cfg)?;
    let tier = cfg.tier()?;
    let data = generate_dataset(
        env.as_ref(),
        tier,
        cfg.usize("data.size")?,
        cfg.seed()?,
        &cfg.budget()?,
    )?;
    let path = out.join(DATASET_FILE);
    save_dataset(&data.buffer, &path)?;
    data.manifest.save(out.join(format!("{DATASET_FILE}.manifest")))?;
    println!(
        "{} {} transitions, mean return {:.3} -> {}",
        tier,
        data.buffer.len(),
        data.manifest.mean_return,
        path.display()
    );
    Ok(())
}

/// Running means of update statistics between metric rows.
#[derive(Default)]
struct Accum {
    critic: f64,
    actor: f64,
    actor_n: usize,
    online: f64,
    n: usize,
}

impl Accum {
    fn add(&mut self, critic: f64, actor: Option<f64>, online: f64) {
        self.critic += critic;
        self.online += online;
        self.n += 1;
        if let Some(a) = actor {
            self.actor += a;
            self.actor_n += 1;
        }
    }

    fn row(&mut self, state: &TrainState, eval_seed: u64) -> CliResult<MetricsRow> {
        let mut env = make_env(state.env().spec().name)?;
        let (mean, std) = evaluate(&state.policy, env.as_mut(), state.config.eval_episodes, eval_seed)?;
        let avg = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
        let row = MetricsRow {
            env_step: state.counters.env_steps,
            grad_step: state.counters.grad_steps,
            critic_loss: avg(self.critic, self.n),
            actor_objective: avg(self.actor, self.actor_n),
            beta: state.entropy.beta(),
            eval_return_mean: mean,
            eval_return_std: std,
            online_fraction_in_batch: avg(self.online, self.n),
        };
        *self = Accum::default();
        Ok(row)
    }
}

pub fn pretrain(cfg: &RunConfig) -> CliResult<()> {
    let out = prepare(cfg)?;
    let env = env_of(cfg)?;
    let path = require(cfg, "data.path", "--dataset")?;
    let spec = env.spec();
    let data = load_dataset_for(&path, spec.state_dim, spec.action_dim)?;
    if data.is_empty() {
        return Err(CliError::invalid(format!("{}: dataset is empty", path.display())));
    }
    let seed = cfg.seed()?;
    let steps = cfg.u64("pretrain.steps")?;
    let interval = cfg.u64("pretrain.eval_interval")?;
    let mut state = TrainState::new(cfg.trainer()?, env, data, seed)?;
    let mut metrics = MetricsWriter::create(out.join(METRICS_FILE))?;
    let mut acc = Accum::default();
    for step in 1..=steps {
        let m = state.pretrain_step()?;
        acc.add(m.critic_loss, m.actor_objective, m.online_fraction);
        if interval > 0 && step % interval == 0 {
            metrics.append(&acc.row(&state, seed.wrapping_add(EVAL_SEED_OFFSET))?)?;
        }
    }
    metrics.flush()?;
    state.checkpoint().save(out.join(CHECKPOINT_FILE))?;
    let mut eval_env = env_of(cfg)?;
    let (mean, std) = evaluate(
        &state.policy,
        eval_env.as_mut(),
        state.config.eval_episodes,
        seed.wrapping_add(EVAL_SEED_OFFSET),
    )?;
    println!("pretrained {steps} steps: eval return {mean:.3} +/- {std:.3}");
    Ok(())
}

pub fn finetune(cfg: &RunConfig) -> CliResult<()> {
    let out = prepare(cfg)?;
    let env = env_of(cfg)?;
    let trainer = cfg.trainer()?;
    let seed = cfg.seed()?;
    let offline = load_dataset_or_empty(cfg, env.as_ref())?;
    let mut state = if cfg.flag("finetune.from_scratch")? {
        TrainState::new(trainer, env, offline, seed)?
    } else {
        let path = require(cfg, "finetune.checkpoint", "--checkpoint or --from-scratch")?;
        let ck = load_checkpoint_for(&path, env.as_ref())?;
        let spec = env.spec();
        ck.expect_fingerprint(&network_fingerprint(
            spec.state_dim,
            spec.action_dim,
            &trainer.hidden,
            trainer.ensemble_size,
        ))?;
        TrainState::from_checkpoint(trainer, env, offline, seed, ck)?
    };
    let eval_seed = seed.wrapping_add(EVAL_SEED_OFFSET);
    let total = state.config.total_env_steps;
    let interval = state.config.eval_interval;
    let mut metrics = MetricsWriter::create(out.join(METRICS_FILE))?;
    let mut acc = Accum::default();
    metrics.append(&acc.row(&state, eval_seed)?)?;
    let mut last = None;
    for _ in 0..total {
        let m = state.finetune_epoch()?;
        let actor = (!m.actor_objective.is_nan()).then_some(m.actor_objective);
        acc.add(m.critic_loss, actor, m.online_fraction);
        let step = state.counters.env_steps;
        if (interval > 0 && step % interval == 0) || step == total {
            let row = acc.row(&state, eval_seed)?;
            last = Some(row.eval_return_mean);
            metrics.append(&row)?;
        }
    }
    metrics.flush()?;
    state.checkpoint().save(out.join(CHECKPOINT_FILE))?;
    match last {
        Some(r) => println!("finetuned {total} env steps: eval return {r:.3}"),
        None => println!("finetuned 0 env steps"),
    }
    Ok(())
}

pub fn evaluate_cmd(cfg: &RunConfig) -> CliResult<()> {
    let out = prepare(cfg)?;
    let mut env = env_of(cfg)?;
    let path = require(cfg, "evaluate.checkpoint", "--checkpoint")?;
    let ck = load_checkpoint_for(&path, env.as_ref())?;
    let episodes = cfg.usize("evaluate.episodes")?;
    let seed = cfg.seed()?;
    if episodes == 0 {
        return Err(CliError::invalid("evaluate needs at least one episode".into()));
    }
    let returns = (0..episodes)
        .map(|i| so2_core::trainer::episode_return(&ck.policy, env.as_mut(), seed.wrapping_add(i as u64)))
        .collect::<so2_core::Result<Vec<f64>>>()?;
    let (mean, std) = so2_core::trainer::mean_std(&returns);
    let mut text = String::from("# so2-evaluate v1\nepisode,seed,return\n");
    for (i, r) in returns.iter().enumerate() {
        text.push_str(&format!("{i},{},{r}\n", seed.wrapping_add(i as u64)));
    }
    let csv = out.join(EVALUATE_FILE);
    fs::write(&csv, text).map_err(|e| CliError::io(&csv, e))?;
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "episodes = {episodes}\nmean_return = {mean}\nstd_return = {std}");
    Ok(())
}

fn fresh_policy(cfg: &RunConfig, env: &dyn Env) -> CliResult<SquashedGaussianPolicy> {
    let spec = env.spec();
    let trainer = cfg.trainer()?;
    let mut init = stream(cfg.seed()?, Purpose::Init);
    Ok(SquashedGaussianPolicy::new(spec.state_dim, spec.action_dim, &trainer.hidden, &mut init)?)
}

pub fn diagnose(cfg: &RunConfig) -> CliResult<()> {
    let out = prepare(cfg)?;
    let mut env = env_of(cfg)?;
    let mode = cfg.diagnostic_mode()?;
    let oracle = cfg.flag("diagnose.oracle_critic")?;
    let gamma = cfg.f64("trainer.gamma")?;
    let (rollout_key, critic_key) = match mode {
        DiagnosticMode::CurrentPolicy => ("diagnose.checkpoint", "diagnose.checkpoint"),
        DiagnosticMode::FixedPolicy => ("diagnose.rollout_checkpoint", "diagnose.critic_checkpoint"),
    };
    let flag_for = |key: &str| match key {
        "diagnose.checkpoint" => "--checkpoint",
        "diagnose.rollout_checkpoint" => "--rollout-checkpoint",
        _ => "--critic-checkpoint",
    };

    let rollout_path = cfg.path(rollout_key);
    let policy = match (&rollout_path, oracle) {
        (Some(p), _) => load_checkpoint_for(p, env.as_ref())?.policy,
        (None, true) => fresh_policy(cfg, env.as_ref())?,
        (None, false) => return Err(CliError::invalid(format!("missing {}", flag_for(rollout_key)))),
    };
    let critic_ck;
    let critic_path;
    let ensemble_est;
    let oracle_est = OracleCritic { gamma, scale: 1.0 };
    let estimator: &dyn QEstimate = if oracle {
        critic_path = None;
        &oracle_est
    } else {
        let p = require(cfg, critic_key, flag_for(critic_key))?;
        critic_ck = load_checkpoint_for(&p, env.as_ref())?;
        critic_path = Some(p);
        ensemble_est = EnsembleEstimator {
            ensemble: &critic_ck.ensemble,
            reduction: cfg.reduction()?,
        };
        &ensemble_est
    };
    let opts = DiagnoseOptions {
        gamma,
        spec: cfg.window_spec()?,
        episodes: cfg.usize("diagnose.episodes")?,
        mode,
        seed: cfg.seed()?,
    };
    let mut report = windowed_kendall(&policy, estimator, env.as_mut(), &opts)?;
    let show = |p: &Option<PathBuf>| p.as_ref().map_or("-".to_string(), |p| p.display().to_string());
    report.policy_checkpoint = show(&rollout_path);
    report.critic_checkpoint = show(&critic_path);
    report.save(out.join(REPORT_FILE))?;
    let s = report.summary();
    println!(
        "K = {} nd_mean = {} nd_median = {} ({} windows, {} pairs)",
        s.k,
        s.nd_mean,
        s.nd_median,
        report.windows.len(),
        report.pairs.len()
    );
    if let Some(base) = cfg.path("diagnose.compare") {
        let baseline = QualityReport::load(&base)?;
        let cmp = report.compare(&baseline)?;
        let path = out.join(COMPARISON_FILE);
        fs::write(&path, cmp.to_text()).map_err(|e| CliError::io(&path, e))?;
        print!("{}", cmp.to_text());
    }
    Ok(())
}
