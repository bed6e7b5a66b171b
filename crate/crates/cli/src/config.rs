//! Flat `section.key = value` run configuration.
//!
//! Resolution order: profile defaults, then the `--config` file, then
//! command-line flags. Every key lives in [`KEYS`]; unknown keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use so2_core::diagnostics::{DiagnosticMode, Reduction, WindowSpec};
use so2_core::envs::{GenerationBudget, Tier};
use so2_core::trainer::{EntropyMode, So2Config, TargetMode};

use crate::error::{CliError, CliResult};

pub const CONFIG_VERSION_LINE: &str = "# so2-run-config v1";
pub const OUTPUT_ROOT_VAR: &str = "SO2_OUTPUT_ROOT";

/// Every tunable, in snapshot order.
pub const KEYS: &[&str] = &[
    "run.profile",
    "run.env",
    "run.seed",
    "run.out",
    "trainer.gamma",
    "trainer.rho",
    "trainer.sigma",
    "trainer.clip",
    "trainer.n_upc",
    "trainer.policy_upc",
    "trainer.batch_size",
    "trainer.ensemble_size",
    "trainer.target_mode",
    "trainer.entropy",
    "trainer.beta",
    "trainer.target_entropy",
    "trainer.actor_lr",
    "trainer.critic_lr",
    "trainer.beta_lr",
    "trainer.hidden",
    "trainer.log_std_min",
    "trainer.log_std_max",
    "trainer.random_steps",
    "trainer.online_capacity",
    "trainer.total_env_steps",
    "trainer.eval_interval",
    "trainer.eval_episodes",
    "data.path",
    "data.tier",
    "data.size",
    "gen.max_env_steps",
    "gen.eval_interval",
    "gen.eval_episodes",
    "pretrain.steps",
    "pretrain.eval_interval",
    "finetune.checkpoint",
    "finetune.from_scratch",
    "evaluate.checkpoint",
    "evaluate.episodes",
    "diagnose.mode",
    "diagnose.checkpoint",
    "diagnose.rollout_checkpoint",
    "diagnose.critic_checkpoint",
    "diagnose.estimator",
    "diagnose.oracle_critic",
    "diagnose.episodes",
    "diagnose.windows",
    "diagnose.window_len",
    "diagnose.compare",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Full,
}

impl Profile {
    pub fn parse(s: &str) -> CliResult<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            _ => Err(CliError::invalid(format!(
                "unknown profile `{s}` (expected desk or full)"
            ))),
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Full => "full",
        }
    }

    fn trainer(self) -> So2Config {
        match self {
            Profile::Desk => So2Config::desk(),
            Profile::Full => So2Config::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

fn registered(key: &str) -> CliResult<&'static str> {
    KEYS.iter()
        .find(|k| **k == key)
        .copied()
        .ok_or_else(|| CliError::config(format!("unknown config key `{key}`")))
}

/// `key = value` pairs from config text; `#` starts a comment line.
pub fn parse_pairs(text: &str, origin: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::config(format!("{origin}:{}: expected `key = value`", n + 1))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn default_out() -> String {
    let root = std::env::var(OUTPUT_ROOT_VAR).unwrap_or_else(|_| "runs".into());
    PathBuf::from(root).to_string_lossy().into_owned()
}

impl RunConfig {
    pub fn defaults(profile: Profile) -> Self {
        let mut values = BTreeMap::new();
        let budget = GenerationBudget::default();
        let spec = WindowSpec::default();
        for (k, v) in [
            ("run.profile", profile.as_str().to_string()),
            ("run.env", "point-mass".into()),
            ("run.seed", "0".into()),
            ("run.out", default_out()),
            ("data.path", String::new()),
            ("data.tier", "random".into()),
            ("data.size", "50000".into()),
            ("gen.max_env_steps", budget.max_env_steps.to_string()),
            ("gen.eval_interval", budget.eval_interval.to_string()),
            ("gen.eval_episodes", budget.eval_episodes.to_string()),
            ("pretrain.steps", "20000".into()),
            ("pretrain.eval_interval", "1000".into()),
            ("finetune.checkpoint", String::new()),
            ("finetune.from_scratch", "false".into()),
            ("evaluate.checkpoint", String::new()),
            ("evaluate.episodes", "10".into()),
            ("diagnose.mode", DiagnosticMode::CurrentPolicy.as_str().into()),
            ("diagnose.checkpoint", String::new()),
            ("diagnose.rollout_checkpoint", String::new()),
            ("diagnose.critic_checkpoint", String::new()),
            ("diagnose.estimator", Reduction::Min.label()),
            ("diagnose.oracle_critic", "false".into()),
            ("diagnose.episodes", "5".into()),
            ("diagnose.windows", spec.windows.to_string()),
            ("diagnose.window_len", spec.window_len.to_string()),
            ("diagnose.compare", String::new()),
        ] {
            values.insert(k, v);
        }
        let mut cfg = Self { values };
        cfg.set_trainer(&profile.trainer());
        cfg
    }

    fn set_trainer(&mut self, c: &So2Config) {
        // Exhaustive on purpose: a new So2Config field must be registered here.
        let So2Config {
            gamma,
            rho,
            sigma,
            clip,
            n_upc,
            policy_upc,
            batch_size,
            ensemble_size,
            target_mode,
            entropy,
            actor_lr,
            critic_lr,
            beta_lr,
            hidden,
            log_std_min,
            log_std_max,
            random_steps,
            online_capacity,
            total_env_steps,
            eval_interval,
            eval_episodes,
        } = c;
        let (mode, beta, target) = match entropy {
            EntropyMode::Fixed { beta } => ("fixed", *beta, None),
            EntropyMode::Auto {
                initial_beta,
                target_entropy,
            } => ("auto", *initial_beta, *target_entropy),
        };
        let hidden: Vec<String> = hidden.iter().map(|h| h.to_string()).collect();
        for (k, v) in [
            ("trainer.gamma", gamma.to_string()),
            ("trainer.rho", rho.to_string()),
            ("trainer.sigma", sigma.to_string()),
            ("trainer.clip", clip.to_string()),
            ("trainer.n_upc", n_upc.to_string()),
            ("trainer.policy_upc", policy_upc.to_string()),
            ("trainer.batch_size", batch_size.to_string()),
            ("trainer.ensemble_size", ensemble_size.to_string()),
            ("trainer.target_mode", target_mode.as_str().to_string()),
            ("trainer.entropy", mode.to_string()),
            ("trainer.beta", beta.to_string()),
            ("trainer.target_entropy", target.map_or("auto".into(), |t| t.to_string())),
            ("trainer.actor_lr", actor_lr.to_string()),
            ("trainer.critic_lr", critic_lr.to_string()),
            ("trainer.beta_lr", beta_lr.to_string()),
            ("trainer.hidden", hidden.join(",")),
            ("trainer.log_std_min", log_std_min.to_string()),
            ("trainer.log_std_max", log_std_max.to_string()),
            ("trainer.random_steps", random_steps.to_string()),
            ("trainer.online_capacity", online_capacity.to_string()),
            ("trainer.total_env_steps", total_env_steps.to_string()),
            ("trainer.eval_interval", eval_interval.to_string()),
            ("trainer.eval_episodes", eval_episodes.to_string()),
        ] {
            self.values.insert(k, v);
        }
    }

    /// Defaults for the chosen profile, overlaid with `file` and then `flags`.
    /// `run.profile` may come from either layer; flags win.
    pub fn resolve(file: Option<&Path>, flags: &[(String, String)]) -> CliResult<Self> {
        let file_pairs = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                parse_pairs(&text, &p.display().to_string())?
            }
            None => Vec::new(),
        };
        let profile = file_pairs
            .iter()
            .chain(flags)
            .rev()
            .find(|(k, _)| k == "run.profile")
            .map_or("desk", |(_, v)| v.as_str());
        let mut cfg = Self::defaults(Profile::parse(profile)?);
        for (k, v) in file_pairs.iter().chain(flags) {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let key = registered(key)?;
        self.values.insert(key, value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> CliResult<T> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| CliError::config(format!("{key}: cannot parse `{v}`")))
    }

    pub fn usize(&self, key: &str) -> CliResult<usize> {
        self.parsed(key)
    }

    pub fn u64(&self, key: &str) -> CliResult<u64> {
        self.parsed(key)
    }

    pub fn f64(&self, key: &str) -> CliResult<f64> {
        self.parsed(key)
    }

    pub fn flag(&self, key: &str) -> CliResult<bool> {
        self.parsed(key)
    }

    /// `None` for an empty value.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.u64("run.seed")
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("run.out"))
    }

    pub fn trainer(&self) -> CliResult<So2Config> {
        let hidden = self
            .get("trainer.hidden")
            .split(',')
            .map(|h| h.trim())
            .filter(|h| !h.is_empty())
            .map(|h| {
                h.parse()
                    .map_err(|_| CliError::config(format!("trainer.hidden: bad width `{h}`")))
            })
            .collect::<CliResult<Vec<usize>>>()?;
        let beta = self.f64("trainer.beta")?;
        let entropy = match self.get("trainer.entropy") {
            "fixed" => EntropyMode::Fixed { beta },
            "auto" => EntropyMode::Auto {
                initial_beta: beta,
                target_entropy: match self.get("trainer.target_entropy") {
                    "auto" => None,
                    _ => Some(self.f64("trainer.target_entropy")?),
                },
            },
            other => {
                return Err(CliError::config(format!(
                    "trainer.entropy: `{other}` (expected auto or fixed)"
                )))
            }
        };
        let cfg = So2Config {
            gamma: self.f64("trainer.gamma")?,
            rho: self.f64("trainer.rho")?,
            sigma: self.f64("trainer.sigma")?,
            clip: self.f64("trainer.clip")?,
            n_upc: self.usize("trainer.n_upc")?,
            policy_upc: self.usize("trainer.policy_upc")?,
            batch_size: self.usize("trainer.batch_size")?,
            ensemble_size: self.usize("trainer.ensemble_size")?,
            target_mode: TargetMode::parse(self.get("trainer.target_mode"))?,
            entropy,
            actor_lr: self.f64("trainer.actor_lr")?,
            critic_lr: self.f64("trainer.critic_lr")?,
            beta_lr: self.f64("trainer.beta_lr")?,
            hidden,
            log_std_min: self.f64("trainer.log_std_min")?,
            log_std_max: self.f64("trainer.log_std_max")?,
            random_steps: self.u64("trainer.random_steps")?,
            online_capacity: self.usize("trainer.online_capacity")?,
            total_env_steps: self.u64("trainer.total_env_steps")?,
            eval_interval: self.u64("trainer.eval_interval")?,
            eval_episodes: self.usize("trainer.eval_episodes")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn tier(&self) -> CliResult<Tier> {
        Ok(Tier::parse(self.get("data.tier"))?)
    }

    pub fn budget(&self) -> CliResult<GenerationBudget> {
        Ok(GenerationBudget {
            max_env_steps: self.u64("gen.max_env_steps")?,
            eval_interval: self.u64("gen.eval_interval")?,
            eval_episodes: self.usize("gen.eval_episodes")?,
            ..GenerationBudget::default()
        })
    }

    pub fn window_spec(&self) -> CliResult<WindowSpec> {
        let spec = WindowSpec {
            windows: self.usize("diagnose.windows")?,
            window_len: self.usize("diagnose.window_len")?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn diagnostic_mode(&self) -> CliResult<DiagnosticMode> {
        Ok(DiagnosticMode::parse(self.get("diagnose.mode"))?)
    }

    pub fn reduction(&self) -> CliResult<Reduction> {
        Ok(Reduction::parse(self.get("diagnose.estimator"))?)
    }

    /// Parses every typed key once so mistakes surface before any work.
    pub fn validate(&self) -> CliResult<()> {
        for key in KEYS {
            if !self.values.contains_key(key) {
                return Err(CliError::config(format!("registry key `{key}` has no value")));
            }
        }
        so2_core::envs::make_env(self.get("run.env"))?;
        self.seed()?;
        self.trainer()?;
        self.tier()?;
        self.usize("data.size")?;
        self.budget()?;
        self.u64("pretrain.steps")?;
        self.u64("pretrain.eval_interval")?;
        self.flag("finetune.from_scratch")?;
        self.usize("evaluate.episodes")?;
        self.diagnostic_mode()?;
        self.reduction()?;
        self.flag("diagnose.oracle_critic")?;
        self.usize("diagnose.episodes")?;
        self.window_spec()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{CONFIG_VERSION_LINE}\n");
        for key in KEYS {
            s.push_str(&format!("{key} = {}\n", self.get(key)));
        }
        s
    }
}

/// Startup self-check: each profile's defaults fill every registered key and
/// survive the text round trip.
pub fn check_registry() -> CliResult<()> {
    for profile in [Profile::Desk, Profile::Full] {
        let cfg = RunConfig::defaults(profile);
        if cfg.values.len() != KEYS.len() {
            let missing: Vec<_> = KEYS.iter().filter(|k| !cfg.values.contains_key(*k)).collect();
            return Err(CliError::config(format!("unregistered defaults for {missing:?}")));
        }
        if cfg.trainer()? != profile.trainer() {
            return Err(CliError::config("trainer keys do not round trip".into()));
        }
    }
    Ok(())
}
