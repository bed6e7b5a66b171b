//! Python bindings for so2-core.
//!
//! Build with `cargo build --release -p so2-py` and put the resulting
//! `libso2.so` on `sys.path` as `so2.so` (see `python/smoke_test.py`).

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use so2_core::actor_critic::{network_fingerprint, Checkpoint};
use so2_core::diagnostics::{
    self, DiagnoseOptions, DiagnosticMode, EnsembleEstimator, OracleCritic, QEstimate, Reduction,
    RolloutTrace, WindowSpec,
};
use so2_core::envs::{self as core_envs, GenerationBudget, Tier};
use so2_core::replay::{self, Transition};
use so2_core::rng::{stream, Purpose};
use so2_core::trainer::{self as core_trainer, So2Config, TargetMode, TrainState};

create_exception!(so2, So2Error, PyException, "Error raised by so2-core; the message starts with [category].");

fn err(e: so2_core::Error) -> PyErr {
    So2Error::new_err(format!("[{}] {}", e.category(), e))
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for so2_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

#[pyclass(name = "Env", unsendable)]
struct PyEnv {
    inner: Box<dyn core_envs::Env>,
}

#[pymethods]
impl PyEnv {
    #[new]
    fn new(name: &str) -> PyResult<Self> {
        Ok(Self { inner: core_envs::make_env(name).py()? })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.spec().name
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.spec().state_dim
    }

    #[getter]
    fn action_dim(&self) -> usize {
        self.inner.spec().action_dim
    }

    #[getter]
    fn max_episode_steps(&self) -> usize {
        self.inner.spec().max_episode_steps
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.inner.reset(seed)
    }

    /// Returns `(state, reward, terminated, truncated)`.
    fn step(&mut self, action: Vec<f64>) -> PyResult<(Vec<f64>, f64, bool, bool)> {
        let s = self.inner.step(&action).py()?;
        Ok((s.state, s.reward, s.terminated, s.truncated))
    }
}

#[pyclass(name = "ReplayBuffer", skip_from_py_object)]
#[derive(Clone)]
struct PyReplayBuffer {
    inner: replay::ReplayBuffer,
}

#[pymethods]
impl PyReplayBuffer {
    #[new]
    fn new(state_dim: usize, action_dim: usize, capacity: usize) -> PyResult<Self> {
        Ok(Self { inner: replay::ReplayBuffer::new(state_dim, action_dim, capacity).py()? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: replay::load_dataset(path).py()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        replay::save_dataset(&self.inner, path).py()
    }

    fn push(&mut self, state: Vec<f64>, action: Vec<f64>, reward: f64, next_state: Vec<f64>, done: bool) -> PyResult<()> {
        self.inner
            .push(Transition { state, action, reward, next_state, done })
            .py()
    }

    /// Transition `i` (oldest first) as `(state, action, reward, next_state, done)`.
    fn get(&self, i: usize) -> PyResult<(Vec<f64>, Vec<f64>, f64, Vec<f64>, bool)> {
        let t = self
            .inner
            .get(i)
            .ok_or_else(|| pyo3::exceptions::PyIndexError::new_err(format!("index {i} out of range")))?;
        Ok((t.state.clone(), t.action.clone(), t.reward, t.next_state.clone(), t.done))
    }

    fn rewards(&self) -> Vec<f64> {
        self.inner.iter().map(|t| t.reward).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    #[getter]
    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }
}

/// Hyperparameters; `Config("desk")` or `Config("full")`.
#[pyclass(name = "Config", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    #[pyo3(get, set)]
    gamma: f64,
    #[pyo3(get, set)]
    rho: f64,
    #[pyo3(get, set)]
    sigma: f64,
    #[pyo3(get, set)]
    clip: f64,
    #[pyo3(get, set)]
    n_upc: usize,
    #[pyo3(get, set)]
    policy_upc: usize,
    #[pyo3(get, set)]
    batch_size: usize,
    #[pyo3(get, set)]
    ensemble_size: usize,
    #[pyo3(get, set)]
    target_mode: String,
    #[pyo3(get, set)]
    hidden: Vec<usize>,
    #[pyo3(get, set)]
    actor_lr: f64,
    #[pyo3(get, set)]
    critic_lr: f64,
    #[pyo3(get, set)]
    total_env_steps: u64,
    #[pyo3(get, set)]
    eval_interval: u64,
    #[pyo3(get, set)]
    eval_episodes: usize,
    base: So2Config,
}

impl PyConfig {
    fn to_core(&self) -> PyResult<So2Config> {
        let cfg = So2Config {
            gamma: self.gamma,
            rho: self.rho,
            sigma: self.sigma,
            clip: self.clip,
            n_upc: self.n_upc,
            policy_upc: self.policy_upc,
            batch_size: self.batch_size,
            ensemble_size: self.ensemble_size,
            target_mode: TargetMode::parse(&self.target_mode).py()?,
            hidden: self.hidden.clone(),
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            total_env_steps: self.total_env_steps,
            eval_interval: self.eval_interval,
            eval_episodes: self.eval_episodes,
            ..self.base.clone()
        };
        cfg.validate().py()?;
        Ok(cfg)
    }
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (profile = "desk"))]
    fn new(profile: &str) -> PyResult<Self> {
        let c = match profile {
            "desk" => So2Config::desk(),
            "full" => So2Config::default(),
            _ => return Err(err(so2_core::Error::InvalidArgument(format!("unknown profile `{profile}`")))),
        };
        Ok(Self {
            gamma: c.gamma,
            rho: c.rho,
            sigma: c.sigma,
            clip: c.clip,
            n_upc: c.n_upc,
            policy_upc: c.policy_upc,
            batch_size: c.batch_size,
            ensemble_size: c.ensemble_size,
            target_mode: c.target_mode.as_str().to_string(),
            hidden: c.hidden.clone(),
            actor_lr: c.actor_lr,
            critic_lr: c.critic_lr,
            total_env_steps: c.total_env_steps,
            eval_interval: c.eval_interval,
            eval_episodes: c.eval_episodes,
            base: c,
        })
    }

    fn validate(&self) -> PyResult<()> {
        self.to_core().map(|_| ())
    }
}

/// Training state: networks, optimizers, replay buffers and counters.
#[pyclass(name = "Trainer", unsendable)]
struct PyTrainer {
    inner: TrainState,
}

#[pymethods]
impl PyTrainer {
    /// Fresh networks, or resumed from `checkpoint` (path) when given.
    #[new]
    #[pyo3(signature = (config, env, dataset = None, seed = 0, checkpoint = None))]
    fn new(
        config: &PyConfig,
        env: &str,
        dataset: Option<&PyReplayBuffer>,
        seed: u64,
        checkpoint: Option<PathBuf>,
    ) -> PyResult<Self> {
        let cfg = config.to_core()?;
        let env = core_envs::make_env(env).py()?;
        let spec = env.spec();
        let offline = match dataset {
            Some(d) => d.inner.clone(),
            None => replay::ReplayBuffer::new(spec.state_dim, spec.action_dim, 1).py()?,
        };
        let inner = match checkpoint {
            None => TrainState::new(cfg, env, offline, seed).py()?,
            Some(path) => {
                let ck = Checkpoint::load(path).py()?;
                ck.expect_fingerprint(&network_fingerprint(
                    spec.state_dim,
                    spec.action_dim,
                    &cfg.hidden,
                    cfg.ensemble_size,
                ))
                .py()?;
                TrainState::from_checkpoint(cfg, env, offline, seed, ck).py()?
            }
        };
        Ok(Self { inner })
    }

    /// Runs `steps` offline updates; returns the last critic loss.
    fn pretrain(&mut self, py: Python<'_>, steps: u64) -> PyResult<f64> {
        let mut loss = f64::NAN;
        for _ in 0..steps {
            loss = self.inner.pretrain_step().py()?.critic_loss;
            if steps > 1000 {
                py.check_signals()?;
            }
        }
        Ok(loss)
    }

    /// One collection step plus `n_upc` updates; returns the epoch metrics.
    fn finetune_epoch<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let m = self.inner.finetune_epoch().py()?;
        let d = PyDict::new(py);
        d.set_item("env_step", m.env_step)?;
        d.set_item("critic_loss", m.critic_loss)?;
        d.set_item("actor_objective", m.actor_objective)?;
        d.set_item("beta", m.beta)?;
        d.set_item("online_fraction", m.online_fraction)?;
        d.set_item("episode_return", m.episode_return)?;
        Ok(d)
    }

    /// Mean and std of mean-action returns over `episodes` episodes.
    #[pyo3(signature = (episodes = 10, seed = 0))]
    fn evaluate(&self, episodes: usize, seed: u64) -> PyResult<(f64, f64)> {
        let mut env = self.inner.env().fresh();
        core_trainer::evaluate(&self.inner.policy, env.as_mut(), episodes, seed).py()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.checkpoint().save(path).py()
    }

    /// `{env_steps, episodes, grad_steps, critic_updates, actor_updates, polyak_updates}`.
    fn counters<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = self.inner.counters;
        let d = PyDict::new(py);
        d.set_item("env_steps", c.env_steps)?;
        d.set_item("episodes", c.episodes)?;
        d.set_item("grad_steps", c.grad_steps)?;
        d.set_item("critic_updates", c.critic_updates)?;
        d.set_item("actor_updates", c.actor_updates)?;
        d.set_item("polyak_updates", c.polyak_updates)?;
        Ok(d)
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.entropy.beta()
    }

    /// Windowed Kendall K and normalized-difference aggregates of this
    /// trainer's own policy and critics.
    #[pyo3(signature = (episodes = 5, seed = 0, estimator = "min", windows = 10, window_len = 32))]
    fn diagnose<'py>(
        &self,
        py: Python<'py>,
        episodes: usize,
        seed: u64,
        estimator: &str,
        windows: usize,
        window_len: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let est = EnsembleEstimator {
            ensemble: &self.inner.ensemble,
            reduction: Reduction::parse(estimator).py()?,
        };
        let opts = DiagnoseOptions {
            gamma: self.inner.config.gamma,
            spec: WindowSpec { windows, window_len },
            episodes,
            mode: DiagnosticMode::CurrentPolicy,
            seed,
        };
        let mut env = self.inner.env().fresh();
        report_dict(py, &self.inner.policy, &est, env.as_mut(), &opts)
    }
}

fn report_dict<'py>(
    py: Python<'py>,
    policy: &so2_core::actor_critic::SquashedGaussianPolicy,
    est: &dyn QEstimate,
    env: &mut dyn core_envs::Env,
    opts: &DiagnoseOptions,
) -> PyResult<Bound<'py, PyDict>> {
    let report = diagnostics::windowed_kendall(policy, est, env, opts).py()?;
    let s = report.summary();
    let d = PyDict::new(py);
    d.set_item("K", s.k)?;
    d.set_item("nd_mean", s.nd_mean)?;
    d.set_item("nd_median", s.nd_median)?;
    d.set_item("nd_excluded", s.nd_excluded)?;
    d.set_item("tail_biased", s.tail_biased)?;
    d.set_item("window_k", report.windows.iter().map(|w| w.k).collect::<Vec<_>>())?;
    Ok(d)
}

/// Scores the Monte-Carlo return itself (scaled by `scale`) on rollouts of a
/// freshly initialized policy; K is 1.0 for any positive scale.
#[pyfunction]
#[pyo3(signature = (env, scale = 1.0, episodes = 2, seed = 0, gamma = 0.99))]
fn oracle_diagnose<'py>(
    py: Python<'py>,
    env: &str,
    scale: f64,
    episodes: usize,
    seed: u64,
    gamma: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let mut env = core_envs::make_env(env).py()?;
    let spec = env.spec();
    let policy = so2_core::actor_critic::SquashedGaussianPolicy::new(
        spec.state_dim,
        spec.action_dim,
        &[32, 32],
        &mut stream(seed, Purpose::Init),
    )
    .py()?;
    let opts = DiagnoseOptions {
        gamma,
        spec: WindowSpec::default(),
        episodes,
        mode: DiagnosticMode::CurrentPolicy,
        seed,
    };
    report_dict(py, &policy, &OracleCritic { gamma, scale }, env.as_mut(), &opts)
}

#[pyfunction]
fn kendall_tau(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    diagnostics::kendall_tau(&x, &y).py()
}

/// Discounted return from step `t` of a reward sequence.
#[pyfunction]
#[pyo3(signature = (rewards, t, gamma, terminated = false))]
fn true_q(rewards: Vec<f64>, t: usize, gamma: f64, terminated: bool) -> PyResult<f64> {
    let n = rewards.len();
    let trace = RolloutTrace::new(vec![vec![]; n], vec![vec![]; n], rewards, terminated).py()?;
    diagnostics::true_q(&trace, t, gamma).py()
}

/// `(q_est - q_true) / q_true`, or `None` when `q_true` is (nearly) zero.
#[pyfunction]
fn normalized_difference(q_est: f64, q_true: f64) -> Option<f64> {
    diagnostics::normalized_difference(q_est, q_true)
}

/// `clamp(action + clip(N(0, sigma^2), -clip, clip), -1, 1)` drawn from `seed`.
#[pyfunction]
fn perturb_action(action: Vec<f64>, sigma: f64, clip: f64, seed: u64) -> Vec<f64> {
    core_trainer::perturb_action(&action, sigma, clip, &mut stream(seed, Purpose::Perturbation))
}

/// Returns `(buffer, mean_return)`.
#[pyfunction]
fn generate_dataset(env: &str, tier: &str, size: usize, seed: u64) -> PyResult<(PyReplayBuffer, f64)> {
    let env = core_envs::make_env(env).py()?;
    let data = core_envs::generate_dataset(env.as_ref(), Tier::parse(tier).py()?, size, seed, &GenerationBudget::default())
        .py()?;
    Ok((PyReplayBuffer { inner: data.buffer }, data.manifest.mean_return))
}

#[pymodule]
fn so2(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("So2Error", m.py().get_type::<So2Error>())?;
    m.add("ENV_NAMES", core_envs::ENV_NAMES.to_vec())?;
    m.add_class::<PyEnv>()?;
    m.add_class::<PyReplayBuffer>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(kendall_tau, m)?)?;
    m.add_function(wrap_pyfunction!(true_q, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_difference, m)?)?;
    m.add_function(wrap_pyfunction!(perturb_action, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_diagnose, m)?)?;
    Ok(())
}
