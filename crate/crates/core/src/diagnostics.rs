//! Q-value quality: Monte-Carlo true Q, normalized difference, and windowed
//! Kendall rank correlation between estimated and true Q along rollouts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::RngCore;

use crate::actor_critic::{QEnsemble, SquashedGaussianPolicy, Which};
use crate::envs::Env;
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

/// True-Q values below this magnitude have no normalized difference.
pub const ND_EPS: f64 = 1e-8;
/// Remaining discount mass above which a truncated tail counts as biased.
pub const TAIL_BIAS_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutTrace {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// False when the episode ended by truncation.
    pub terminated: bool,
}

impl RolloutTrace {
    pub fn new(
        states: Vec<Vec<f64>>,
        actions: Vec<Vec<f64>>,
        rewards: Vec<f64>,
        terminated: bool,
    ) -> Result<Self> {
        if rewards.is_empty() {
            return Err(Error::Diagnostics("rollout trace must hold at least one step".into()));
        }
        if states.len() != rewards.len() || actions.len() != rewards.len() {
            return Err(Error::Diagnostics(format!(
                "rollout trace lengths differ: {} states, {} actions, {} rewards",
                states.len(),
                actions.len(),
                rewards.len()
            )));
        }
        if let Some(k) = rewards.iter().position(|r| !r.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("rollout reward at step {k}"),
            });
        }
        Ok(Self {
            states,
            actions,
            rewards,
            terminated,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// `sum_{k=t}^{T-1} gamma^(k-t) r_k`.
pub fn true_q(trace: &RolloutTrace, t: usize, gamma: f64) -> Result<f64> {
    if t >= trace.len() {
        return Err(Error::Diagnostics(format!(
            "step index {t} out of range for a trace of length {}",
            trace.len()
        )));
    }
    let mut discount = 1.0;
    let mut total = 0.0;
    for r in &trace.rewards[t..] {
        total += discount * r;
        discount *= gamma;
    }
    Ok(total)
}

/// Whether the return from `t` misses a non-negligible truncated tail.
pub fn tail_biased(trace: &RolloutTrace, t: usize, gamma: f64) -> bool {
    !trace.terminated && gamma.powi((trace.len() - t.min(trace.len())) as i32) > TAIL_BIAS_THRESHOLD
}

/// `(q_est - q_true) / q_true`, or `None` when `|q_true| <= 1e-8`.
pub fn normalized_difference(q_est: f64, q_true: f64) -> Option<f64> {
    (q_true.abs() > ND_EPS).then(|| (q_est - q_true) / q_true)
}

/// Kendall tau-b in O(n log n) (Knight's algorithm).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::Dimension {
            what: "kendall_tau second argument".into(),
            expected: n,
            got: y.len(),
        });
    }
    if n < 2 {
        return Err(Error::Diagnostics(format!("kendall_tau needs at least 2 items, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "kendall_tau input".into(),
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let pairs = |run: u64| run * (run.saturating_sub(1)) / 2;
    let n0 = pairs(n as u64);
    // ties in x, and joint ties
    let (mut n1, mut n3) = (0u64, 0u64);
    let (mut rx, mut rxy) = (1u64, 1u64);
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        if x[a] == x[b] {
            rx += 1;
            if y[a] == y[b] {
                rxy += 1;
            } else {
                n3 += pairs(rxy);
                rxy = 1;
            }
        } else {
            n1 += pairs(rx);
            n3 += pairs(rxy);
            rx = 1;
            rxy = 1;
        }
    }
    n1 += pairs(rx);
    n3 += pairs(rxy);

    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut scratch = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut scratch);

    let mut n2 = 0u64;
    let mut ry = 1u64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            ry += 1;
        } else {
            n2 += pairs(ry);
            ry = 1;
        }
    }
    n2 += pairs(ry);

    if n1 == n0 || n2 == n0 {
        return Err(Error::Diagnostics(
            "kendall_tau is undefined when either argument is constant".into(),
        ));
    }
    let numerator = n0 as i128 - n1 as i128 - n2 as i128 + n3 as i128 - 2 * swaps as i128;
    Ok(tau_b(numerator, n0 - n1, n0 - n2))
}

/// Shared final step so every implementation rounds identically.
pub fn tau_b(concordant_minus_discordant: i128, untied_x: u64, untied_y: u64) -> f64 {
    concordant_minus_discordant as f64 / ((untied_x as u128 * untied_y as u128) as f64).sqrt()
}

/// Sorts `v` ascending, returning the number of strict inversions.
fn merge_count(v: &mut [f64], scratch: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], &mut scratch[..mid]) + merge_count(&mut v[mid..], &mut scratch[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            scratch[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            scratch[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    scratch[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    scratch[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&scratch[..n]);
    swaps
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub windows: usize,
    pub window_len: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            windows: 10,
            window_len: 32,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.windows < 1 {
            return Err(Error::InvalidArgument("window count must be >= 1".into()));
        }
        if self.window_len < 2 {
            return Err(Error::InvalidArgument("window length must be >= 2".into()));
        }
        Ok(())
    }

    /// Shortest episode that fits `windows` distinct windows.
    pub fn min_episode_len(&self) -> usize {
        self.window_len + self.windows - 1
    }

    /// Start indices `round(i (T - W) / (M - 1))`.
    pub fn starts(&self, episode_len: usize) -> Result<Vec<usize>> {
        self.validate()?;
        if episode_len < self.min_episode_len() {
            return Err(Error::Diagnostics(format!(
                "episode of length {episode_len} is too short for {} windows of {} pairs; \
                 need at least {} steps",
                self.windows,
                self.window_len,
                self.min_episode_len()
            )));
        }
        let span = (episode_len - self.window_len) as f64;
        Ok((0..self.windows)
            .map(|i| {
                if self.windows == 1 {
                    0
                } else {
                    (i as f64 * span / (self.windows - 1) as f64).round() as usize
                }
            })
            .collect())
    }
}

/// Source of estimated Q values along a trace.
pub trait QEstimate {
    fn name(&self) -> String;
    fn estimate_trace(&self, trace: &RolloutTrace) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Min,
    Mean,
    Member(usize),
}

impl Reduction {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(Reduction::Min),
            "mean" => Ok(Reduction::Mean),
            other => other
                .strip_prefix("member-")
                .and_then(|k| k.parse().ok())
                .map(Reduction::Member)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "unknown estimator `{s}` (expected min, mean or member-<k>)"
                    ))
                }),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Reduction::Min => "min".into(),
            Reduction::Mean => "mean".into(),
            Reduction::Member(k) => format!("member-{k}"),
        }
    }
}

/// Estimates from the online critics of an ensemble.
pub struct EnsembleEstimator<'a> {
    pub ensemble: &'a QEnsemble,
    pub reduction: Reduction,
}

impl QEstimate for EnsembleEstimator<'_> {
    fn name(&self) -> String {
        format!("ensemble-{}", self.reduction.label())
    }

    fn estimate_trace(&self, trace: &RolloutTrace) -> Result<Vec<f64>> {
        let n = trace.len();
        if let Reduction::Member(k) = self.reduction {
            if k >= self.ensemble.len() {
                return Err(Error::InvalidArgument(format!(
                    "estimator member {k} out of range for an ensemble of {}",
                    self.ensemble.len()
                )));
            }
        }
        let states: Vec<f64> = trace.states.concat();
        let actions: Vec<f64> = trace.actions.concat();
        let q = self.ensemble.q_values_batch(Which::Online, &states, &actions, n)?;
        Ok((0..n)
            .map(|row| match self.reduction {
                Reduction::Min => q.iter().map(|m| m[row]).fold(f64::INFINITY, f64::min),
                Reduction::Mean => q.iter().map(|m| m[row]).sum::<f64>() / q.len() as f64,
                Reduction::Member(k) => q[k][row],
            })
            .collect())
    }
}

/// Test double: `scale * true_q`, exact by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleCritic {
    pub gamma: f64,
    pub scale: f64,
}

impl QEstimate for OracleCritic {
    fn name(&self) -> String {
        format!("oracle-x{}", self.scale)
    }

    fn estimate_trace(&self, trace: &RolloutTrace) -> Result<Vec<f64>> {
        (0..trace.len())
            .map(|t| true_q(trace, t, self.gamma).map(|q| self.scale * q))
            .collect()
    }
}

/// Rolls out `episodes` stochastic episodes; episode `i` is seeded from
/// `seed + i`.
pub fn rollout_episodes(
    policy: &SquashedGaussianPolicy,
    env: &mut dyn Env,
    episodes: usize,
    seed: u64,
) -> Result<Vec<RolloutTrace>> {
    (0..episodes as u64)
        .map(|i| {
            let mut rng = stream(seed.wrapping_add(i), Purpose::Rollout);
            let mut s = env.reset(rng.next_u64());
            let (mut states, mut actions, mut rewards) = (Vec::new(), Vec::new(), Vec::new());
            loop {
                let (a, _) = policy.sample(&s, &mut rng)?;
                let step = env.step(&a)?;
                states.push(s);
                actions.push(a);
                rewards.push(step.reward);
                if step.episode_over() {
                    return RolloutTrace::new(states, actions, rewards, step.terminated);
                }
                s = step.state;
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticMode {
    CurrentPolicy,
    FixedPolicy,
}

impl DiagnosticMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosticMode::CurrentPolicy => "current-policy",
            DiagnosticMode::FixedPolicy => "fixed-policy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "current-policy" | "current_policy" => Ok(DiagnosticMode::CurrentPolicy),
            "fixed-policy" | "fixed_policy" => Ok(DiagnosticMode::FixedPolicy),
            _ => Err(Error::InvalidArgument(format!(
                "unknown diagnostic mode `{s}` (expected current-policy or fixed-policy)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub episode: usize,
    pub t: usize,
    pub q_est: f64,
    pub q_true: f64,
    pub normalized_difference: Option<f64>,
    pub tail_biased: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord {
    pub episode: usize,
    pub window: usize,
    pub start: usize,
    pub k: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub env: String,
    pub gamma: f64,
    pub mode: DiagnosticMode,
    pub estimator: String,
    pub policy_checkpoint: String,
    pub critic_checkpoint: String,
    pub spec: WindowSpec,
    pub episodes: usize,
    pub seed: u64,
    pub windows: Vec<WindowRecord>,
    pub pairs: Vec<PairRecord>,
}

pub const REPORT_VERSION_LINE: &str = "# so2-quality-report v1";

/// Aggregates of a report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportSummary {
    pub k: f64,
    pub nd_mean: f64,
    pub nd_median: f64,
    pub nd_excluded: usize,
    pub tail_biased: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

impl QualityReport {
    /// Mean of the per-window coefficients.
    pub fn k(&self) -> f64 {
        self.windows.iter().map(|w| w.k).sum::<f64>() / self.windows.len() as f64
    }

    pub fn summary(&self) -> ReportSummary {
        let nds: Vec<f64> = self.pairs.iter().filter_map(|p| p.normalized_difference).collect();
        ReportSummary {
            k: self.k(),
            nd_mean: if nds.is_empty() {
                f64::NAN
            } else {
                nds.iter().sum::<f64>() / nds.len() as f64
            },
            nd_median: median(nds.clone()),
            nd_excluded: self.pairs.len() - nds.len(),
            tail_biased: self.pairs.iter().filter(|p| p.tail_biased).count(),
        }
    }

    pub fn to_text(&self) -> String {
        let s = self.summary();
        let mut out = String::new();
        out.push_str(REPORT_VERSION_LINE);
        out.push('\n');
        let header: [(&str, String); 16] = [
            ("env", self.env.clone()),
            ("gamma", self.gamma.to_string()),
            ("mode", self.mode.as_str().into()),
            ("estimator", self.estimator.clone()),
            ("policy_checkpoint", self.policy_checkpoint.clone()),
            ("critic_checkpoint", self.critic_checkpoint.clone()),
            ("windows_per_episode", self.spec.windows.to_string()),
            ("window_len", self.spec.window_len.to_string()),
            ("episodes", self.episodes.to_string()),
            ("seed", self.seed.to_string()),
            ("K", s.k.to_string()),
            ("pairs", self.pairs.len().to_string()),
            ("nd_mean", s.nd_mean.to_string()),
            ("nd_median", s.nd_median.to_string()),
            ("nd_excluded", s.nd_excluded.to_string()),
            ("tail_biased", s.tail_biased.to_string()),
        ];
        for (k, v) in header {
            let _ = writeln!(out, "{k} = {v}");
        }
        out.push_str("\n[windows]\nepisode,window,start,k\n");
        for w in &self.windows {
            let _ = writeln!(out, "{},{},{},{}", w.episode, w.window, w.start, w.k);
        }
        out.push_str("\n[pairs]\nepisode,t,q_est,q_true,normalized_difference,tail_biased\n");
        for p in &self.pairs {
            let nd = p
                .normalized_difference
                .map_or_else(|| "undefined".to_string(), |v| v.to_string());
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                p.episode, p.t, p.q_est, p.q_true, nd, p.tail_biased as u8
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Diagnostics(format!("malformed quality report: {msg}"));
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_VERSION_LINE) {
            return Err(bad(format!("first line must be `{REPORT_VERSION_LINE}`")));
        }
        let mut header = BTreeMap::new();
        let mut section = "";
        let mut windows = Vec::new();
        let mut pairs = Vec::new();
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line == "[windows]" || line == "[pairs]" {
                section = if line == "[windows]" { "windows" } else { "pairs" };
                continue;
            }
            if line.starts_with("episode,") {
                continue;
            }
            match section {
                "" => {
                    let (k, v) = line
                        .split_once('=')
                        .ok_or_else(|| bad(format!("header line `{line}`")))?;
                    header.insert(k.trim().to_string(), v.trim().to_string());
                }
                "windows" => {
                    let f: Vec<&str> = line.split(',').collect();
                    if f.len() != 4 {
                        return Err(bad(format!("window row `{line}`")));
                    }
                    windows.push(WindowRecord {
                        episode: num(f[0], &bad)?,
                        window: num(f[1], &bad)?,
                        start: num(f[2], &bad)?,
                        k: num(f[3], &bad)?,
                    });
                }
                _ => {
                    let f: Vec<&str> = line.split(',').collect();
                    if f.len() != 6 {
                        return Err(bad(format!("pair row `{line}`")));
                    }
                    pairs.push(PairRecord {
                        episode: num(f[0], &bad)?,
                        t: num(f[1], &bad)?,
                        q_est: num(f[2], &bad)?,
                        q_true: num(f[3], &bad)?,
                        normalized_difference: if f[4] == "undefined" {
                            None
                        } else {
                            Some(num(f[4], &bad)?)
                        },
                        tail_biased: num::<u8>(f[5], &bad)? == 1,
                    });
                }
            }
        }
        let get = |k: &str| {
            header
                .get(k)
                .cloned()
                .ok_or_else(|| bad(format!("missing header `{k}`")))
        };
        if windows.is_empty() {
            return Err(bad("no windows".into()));
        }
        Ok(Self {
            env: get("env")?,
            gamma: num(&get("gamma")?, &bad)?,
            mode: DiagnosticMode::parse(&get("mode")?)?,
            estimator: get("estimator")?,
            policy_checkpoint: get("policy_checkpoint")?,
            critic_checkpoint: get("critic_checkpoint")?,
            spec: WindowSpec {
                windows: num(&get("windows_per_episode")?, &bad)?,
                window_len: num(&get("window_len")?, &bad)?,
            },
            episodes: num(&get("episodes")?, &bad)?,
            seed: num(&get("seed")?, &bad)?,
            windows,
            pairs,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Aggregates of `self` minus those of `baseline` (same env required).
    pub fn compare(&self, baseline: &QualityReport) -> Result<ReportComparison> {
        if self.env != baseline.env {
            return Err(Error::Diagnostics(format!(
                "cannot compare a report on `{}` against a baseline on `{}`",
                self.env, baseline.env
            )));
        }
        let (a, b) = (self.summary(), baseline.summary());
        Ok(ReportComparison {
            env: self.env.clone(),
            k: a.k - b.k,
            nd_mean: a.nd_mean - b.nd_mean,
            nd_median: a.nd_median - b.nd_median,
        })
    }
}

fn num<T: std::str::FromStr>(s: &str, bad: &impl Fn(String) -> Error) -> Result<T> {
    s.trim().parse().map_err(|_| bad(format!("bad number `{s}`")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportComparison {
    pub env: String,
    pub k: f64,
    pub nd_mean: f64,
    pub nd_median: f64,
}

impl ReportComparison {
    pub fn to_text(&self) -> String {
        format!(
            "# so2-quality-comparison v1\nenv = {}\nK_diff = {}\nnd_mean_diff = {}\nnd_median_diff = {}\n",
            self.env, self.k, self.nd_mean, self.nd_median
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnoseOptions {
    pub gamma: f64,
    pub spec: WindowSpec,
    pub episodes: usize,
    pub mode: DiagnosticMode,
    pub seed: u64,
}

/// Rolls out `rollout_policy` and scores `estimator` against Monte-Carlo
/// returns over evenly spaced windows of every episode.
pub fn windowed_kendall(
    rollout_policy: &SquashedGaussianPolicy,
    estimator: &dyn QEstimate,
    env: &mut dyn Env,
    opts: &DiagnoseOptions,
) -> Result<QualityReport> {
    opts.spec.validate()?;
    if opts.episodes == 0 {
        return Err(Error::InvalidArgument("diagnostics need at least one episode".into()));
    }
    if !(0.0..=1.0).contains(&opts.gamma) {
        return Err(Error::InvalidArgument(format!("gamma {} outside [0, 1]", opts.gamma)));
    }
    let spec = env.spec();
    if spec.max_episode_steps < opts.spec.min_episode_len() {
        return Err(Error::Diagnostics(format!(
            "{} episodes last {} steps; the window layout needs at least {}",
            spec.name,
            spec.max_episode_steps,
            opts.spec.min_episode_len()
        )));
    }
    let traces = rollout_episodes(rollout_policy, env, opts.episodes, opts.seed)?;
    let mut windows = Vec::new();
    let mut pairs = Vec::new();
    for (ep, trace) in traces.iter().enumerate() {
        let starts = opts.spec.starts(trace.len())?;
        let est = estimator.estimate_trace(trace)?;
        if est.len() != trace.len() {
            return Err(Error::Dimension {
                what: "estimated Q values".into(),
                expected: trace.len(),
                got: est.len(),
            });
        }
        let truth = (0..trace.len())
            .map(|t| true_q(trace, t, opts.gamma))
            .collect::<Result<Vec<_>>>()?;
        for (t, (&q_est, &q_true)) in est.iter().zip(&truth).enumerate() {
            pairs.push(PairRecord {
                episode: ep,
                t,
                q_est,
                q_true,
                normalized_difference: normalized_difference(q_est, q_true),
                tail_biased: tail_biased(trace, t, opts.gamma),
            });
        }
        for (i, &start) in starts.iter().enumerate() {
            let end = start + opts.spec.window_len;
            let k = kendall_tau(&est[start..end], &truth[start..end]).map_err(|e| {
                Error::Diagnostics(format!("episode {ep} window {i} (start {start}): {e}"))
            })?;
            windows.push(WindowRecord {
                episode: ep,
                window: i,
                start,
                k,
            });
        }
    }
    Ok(QualityReport {
        env: spec.name.to_string(),
        gamma: opts.gamma,
        mode: opts.mode,
        estimator: estimator.name(),
        policy_checkpoint: "-".into(),
        critic_checkpoint: "-".into(),
        spec: opts.spec,
        episodes: opts.episodes,
        seed: opts.seed,
        windows,
        pairs,
    })
}
