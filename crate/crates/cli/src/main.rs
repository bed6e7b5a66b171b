use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use so2_cli::commands;
use so2_cli::config::{check_registry, RunConfig};
use so2_cli::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "so2", version, about = "Offline-to-online ensemble SAC with perturbed value updates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an offline dataset of a given quality tier.
    GenData(GenDataArgs),
    /// Offline pretraining on a dataset.
    Pretrain(PretrainArgs),
    /// Online finetuning from a pretrained checkpoint (or from scratch).
    Finetune(FinetuneArgs),
    /// Mean-action evaluation of a checkpoint.
    Evaluate(EvaluateArgs),
    /// Q-value quality report: windowed Kendall tau and normalized differences.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct Common {
    /// Config file of `section.key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Any config key, as KEY=VALUE. Repeatable; applied before named flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Default hyperparameters: desk (small nets) or full.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: $SO2_OUTPUT_ROOT or ./runs].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainerFlags {
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    nupc: Option<usize>,
    #[arg(long = "policy-upc")]
    policy_upc: Option<usize>,
    #[arg(long)]
    ensemble: Option<usize>,
    /// min-ensemble or independent.
    #[arg(long = "target-mode")]
    target_mode: Option<String>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    /// Hidden widths, e.g. 32,32.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long = "total-env-steps")]
    total_env_steps: Option<u64>,
    #[arg(long = "eval-interval")]
    eval_interval: Option<u64>,
    #[arg(long = "eval-episodes")]
    eval_episodes: Option<usize>,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    /// random, medium, medium-replay or expert.
    #[arg(long)]
    tier: Option<String>,
    /// Number of transitions.
    #[arg(long)]
    size: Option<usize>,
    /// Online-training budget for the medium and expert tiers.
    #[arg(long = "max-env-steps")]
    max_env_steps: Option<u64>,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    trainer: TrainerFlags,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
}

#[derive(Args)]
struct FinetuneArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    trainer: TrainerFlags,
    /// Pretrained checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Offline dataset kept in the replay union.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Start from freshly initialized networks instead of a checkpoint.
    #[arg(long = "from-scratch")]
    from_scratch: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    common: Common,
    /// current-policy or fixed-policy.
    #[arg(long)]
    mode: Option<String>,
    /// Checkpoint supplying both policy and critic (current-policy mode).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long = "rollout-checkpoint")]
    rollout_checkpoint: Option<PathBuf>,
    #[arg(long = "critic-checkpoint")]
    critic_checkpoint: Option<PathBuf>,
    /// min, mean or member-K.
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    windows: Option<usize>,
    #[arg(long = "window-len")]
    window_len: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Baseline report; writes the difference of aggregates.
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Score the Monte-Carlo return itself (test double).
    #[arg(long = "oracle-critic", hide = true)]
    oracle_critic: bool,
}

type Pairs = Vec<(String, String)>;

fn put<T: ToString>(pairs: &mut Pairs, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        pairs.push((key.to_string(), v.to_string()));
    }
}

fn put_path(pairs: &mut Pairs, key: &str, v: &Option<PathBuf>) {
    put(pairs, key, &v.as_ref().map(|p| p.display().to_string()));
}

impl Common {
    fn pairs(&self) -> CliResult<Pairs> {
        let mut p = Pairs::new();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::new("usage", format!("--set expects KEY=VALUE, got `{kv}`")))?;
            p.push((k.trim().to_string(), v.trim().to_string()));
        }
        put(&mut p, "run.profile", &self.profile);
        put(&mut p, "run.env", &self.env);
        put(&mut p, "run.seed", &self.seed);
        put_path(&mut p, "run.out", &self.out);
        Ok(p)
    }
}

impl TrainerFlags {
    fn extend(&self, p: &mut Pairs) {
        put(p, "trainer.sigma", &self.sigma);
        put(p, "trainer.clip", &self.clip);
        put(p, "trainer.n_upc", &self.nupc);
        put(p, "trainer.policy_upc", &self.policy_upc);
        // Keeps the actor schedule valid when only --nupc is lowered.
        if self.policy_upc.is_none() {
            put(p, "trainer.policy_upc", &self.nupc);
        }
        put(p, "trainer.ensemble_size", &self.ensemble);
        put(p, "trainer.target_mode", &self.target_mode);
        put(p, "trainer.batch_size", &self.batch_size);
        put(p, "trainer.hidden", &self.hidden);
        put(p, "trainer.gamma", &self.gamma);
        put(p, "trainer.total_env_steps", &self.total_env_steps);
        put(p, "trainer.eval_interval", &self.eval_interval);
        put(p, "trainer.eval_episodes", &self.eval_episodes);
    }
}

fn resolve(common: &Common, mut extra: Pairs) -> CliResult<RunConfig> {
    let mut pairs = common.pairs()?;
    pairs.append(&mut extra);
    RunConfig::resolve(common.config.as_deref(), &pairs)
}

fn run(cli: Cli) -> CliResult<()> {
    check_registry()?;
    match cli.command {
        Command::GenData(a) => {
            let mut p = Pairs::new();
            put(&mut p, "data.tier", &a.tier);
            put(&mut p, "data.size", &a.size);
            put(&mut p, "gen.max_env_steps", &a.max_env_steps);
            commands::gen_data(&resolve(&a.common, p)?)
        }
        Command::Pretrain(a) => {
            let mut p = Pairs::new();
            a.trainer.extend(&mut p);
            put_path(&mut p, "data.path", &a.dataset);
            put(&mut p, "pretrain.steps", &a.steps);
            commands::pretrain(&resolve(&a.common, p)?)
        }
        Command::Finetune(a) => {
            let mut p = Pairs::new();
            a.trainer.extend(&mut p);
            put_path(&mut p, "finetune.checkpoint", &a.checkpoint);
            put_path(&mut p, "data.path", &a.dataset);
            if a.from_scratch {
                put(&mut p, "finetune.from_scratch", &Some(true));
            }
            commands::finetune(&resolve(&a.common, p)?)
        }
        Command::Evaluate(a) => {
            let mut p = Pairs::new();
            put_path(&mut p, "evaluate.checkpoint", &a.checkpoint);
            put(&mut p, "evaluate.episodes", &a.episodes);
            commands::evaluate_cmd(&resolve(&a.common, p)?)
        }
        Command::Diagnose(a) => {
            let mut p = Pairs::new();
            put(&mut p, "diagnose.mode", &a.mode);
            put_path(&mut p, "diagnose.checkpoint", &a.checkpoint);
            put_path(&mut p, "diagnose.rollout_checkpoint", &a.rollout_checkpoint);
            put_path(&mut p, "diagnose.critic_checkpoint", &a.critic_checkpoint);
            put(&mut p, "diagnose.estimator", &a.estimator);
            put(&mut p, "diagnose.episodes", &a.episodes);
            put(&mut p, "diagnose.windows", &a.windows);
            put(&mut p, "diagnose.window_len", &a.window_len);
            put(&mut p, "trainer.gamma", &a.gamma);
            put_path(&mut p, "diagnose.compare", &a.compare);
            if a.oracle_critic {
                put(&mut p, "diagnose.oracle_critic", &Some(true));
            }
            commands::diagnose(&resolve(&a.common, p)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", CliError::new("usage", first.to_string()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
