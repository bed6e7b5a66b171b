//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run everything with `cargo test -p so2-cli --test acceptance`, or a subset
//! by naming criteria: `cargo test -p so2-cli --test acceptance -- 1 3 10`.
//! Criteria 6-8 share one set of pretraining and finetuning runs.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use so2_core::actor_critic::{Checkpoint, QEnsemble, SquashedGaussianPolicy, Which};
use so2_core::diagnostics::{
    kendall_tau, windowed_kendall, DiagnoseOptions, DiagnosticMode, EnsembleEstimator,
    OracleCritic, Reduction, WindowSpec,
};
use so2_core::envs::{generate_dataset, ConstantEnv, GenerationBudget, PointMassEnv, Tier};
use so2_core::replay::ReplayBuffer;
use so2_core::trainer::{
    apply_noise, compute_target, draw_target_noise, evaluate, mean_std, pretrain, So2Config,
    TargetMode, TargetParams, TrainState,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn c1_gradients() -> Outcome {
    let t = Instant::now();
    let worst = (0..100u64).map(common::gradient_check).fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-4 && secs < 10.0,
        format!("max relative error {worst:.2e} over 100 networks in {secs:.2} s"),
    )
}

fn c2_kendall() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    let mut tied_defined = 0;
    for i in 0..200 {
        let n = rng.random_range(2..=300);
        let (x, y): (Vec<f64>, Vec<f64>) = if i % 2 == 0 {
            (0..n).map(|_| (rng.random_range(-1e3..1e3), rng.random_range(-1e3..1e3))).unzip()
        } else {
            (0..n)
                .map(|_| (rng.random_range(0..6) as f64, rng.random_range(0..4) as f64))
                .unzip()
        };
        let got = kendall_tau(&x, &y).ok();
        let expected = common::kendall_brute(&x, &y);
        if got != expected {
            mismatches += 1;
        }
        if i % 2 == 1 && expected.is_some() {
            tied_defined += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && secs < 5.0,
        format!("{mismatches} mismatches on 200 vectors ({tied_defined} tied with defined tau) in {secs:.2} s"),
    )
}

fn c3_reduction_to_sac() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let sd = rng.random_range(1..=5);
        let ad = rng.random_range(1..=3);
        let policy = SquashedGaussianPolicy::new(sd, ad, &[8, 8], &mut rng).unwrap();
        let online = QEnsemble::new(sd, ad, &[8], 1, &mut rng).unwrap();
        let target = QEnsemble::new(sd, ad, &[8], 1, &mut rng).unwrap();
        let ens = QEnsemble::from_members(
            online.members(Which::Online).to_vec(),
            target.members(Which::Online).to_vec(),
            sd,
            ad,
        )
        .unwrap();
        let rows = rng.random_range(1..=64);
        let batch = common::random_batch(&mut rng, rows, sd, ad);
        let beta = rng.random_range(0.0..1.0);
        let seed: u64 = rng.random();
        let params = TargetParams { gamma: 0.99, sigma: 0.0, clip: 0.6, beta, mode: TargetMode::MinEnsemble };
        let got = compute_target(
            &batch,
            &ens,
            &policy,
            &params,
            &mut ChaCha8Rng::seed_from_u64(seed),
            &mut ChaCha8Rng::seed_from_u64(!seed),
        )
        .unwrap();
        let expected = common::plain_sac_target(
            &batch,
            &ens.members(Which::Target)[0],
            &policy,
            0.99,
            beta,
            &mut ChaCha8Rng::seed_from_u64(seed),
        );
        for (g, e) in got.for_member(0).iter().zip(&expected) {
            worst = worst.max((g - e).abs());
        }
    }
    outcome(worst <= 1e-12, format!("max |difference| {worst:.1e} over 1000 batches"))
}

fn c4_perturbation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 100_000;
    let (mut sum, mut sq, mut max_abs) = (0.0, 0.0, 0.0f64);
    let mut out_of_range = 0;
    for _ in 0..n {
        let noise = draw_target_noise(1, 0.3, 0.6, &mut rng);
        let raw = noise.raw[0];
        sum += raw;
        sq += raw * raw;
        max_abs = max_abs.max(noise.clipped[0].abs());
        let a = rng.random_range(-1.0..=1.0);
        let p = apply_noise(&[a], &noise.clipped)[0];
        if !(-1.0..=1.0).contains(&p) {
            out_of_range += 1;
        }
    }
    let mean = sum / n as f64;
    let std = (sq / n as f64 - mean * mean).sqrt();
    let rel = (std / 0.3 - 1.0).abs();
    outcome(
        max_abs <= 0.6 && rel <= 0.02 && out_of_range == 0,
        format!("max |eps| {max_abs:.4}, pre-clip std {std:.5} ({:.2}% off), {out_of_range} actions outside [-1, 1]", rel * 100.0),
    )
}

fn c5_loop_accounting() -> Outcome {
    let data = generate_dataset(&PointMassEnv::new(), Tier::Random, 500, 5, &GenerationBudget::default())
        .unwrap()
        .buffer;
    let mut ok = true;
    let mut seen = Vec::new();
    for policy_upc in [10usize, 1, 3] {
        let cfg = So2Config { n_upc: 10, policy_upc, batch_size: 16, hidden: vec![8], ..So2Config::desk() };
        let mut st = TrainState::new(cfg, Box::new(PointMassEnv::new()), data.clone(), 5).unwrap();
        for _ in 0..20 {
            let before = st.counters;
            st.finetune_epoch().unwrap();
            let c = st.counters;
            let d = (
                c.env_steps - before.env_steps,
                c.critic_updates - before.critic_updates,
                c.actor_updates - before.actor_updates,
                c.polyak_updates - before.polyak_updates,
            );
            ok &= d == (1, 10, policy_upc as u64, 10);
            if !seen.contains(&d) {
                seen.push(d);
            }
        }
    }
    outcome(
        ok,
        format!("per env step (env, critic, actor, polyak) deltas seen: {seen:?}"),
    )
}

const GROUPS: u64 = 4;
const FINETUNE_SEEDS: u64 = 3;
const DATASET_SIZE: usize = 50_000;
const PRETRAIN_STEPS: u64 = 20_000;
const FINETUNE_STEPS: u64 = 10_000;
const EVAL_EPISODES: usize = 10;
const EVAL_SEED: u64 = 1_000_003;

struct Run {
    final_return: f64,
    checkpoint: Checkpoint,
}

struct Group {
    pretrained: Checkpoint,
    /// N_upc = 1, sigma = 0.3, finetune seed 0.
    nupc1: Run,
    /// N_upc = 10 at sigma = 0.3 and sigma = 0, one run per finetune seed.
    sigma03: Vec<Run>,
    sigma0: Vec<Run>,
}

fn finetune_run(pre: &Checkpoint, data: &ReplayBuffer, n_upc: usize, sigma: f64, seed: u64) -> Run {
    let cfg = So2Config { n_upc, policy_upc: n_upc, sigma, total_env_steps: FINETUNE_STEPS, ..So2Config::desk() };
    let mut st = TrainState::from_checkpoint(cfg, Box::new(PointMassEnv::new()), data.clone(), seed, pre.clone()).unwrap();
    for _ in 0..FINETUNE_STEPS {
        st.finetune_epoch().unwrap();
    }
    let (final_return, _) = evaluate(&st.policy, &mut PointMassEnv::new(), EVAL_EPISODES, EVAL_SEED).unwrap();
    Run { final_return, checkpoint: st.checkpoint() }
}

/// Returns the groups and the seconds spent on the runs criterion 6 needs
/// (dataset, pretraining and the two N_upc finetunes of each group).
fn run_groups(with_sigma_sweep: bool) -> (Vec<Group>, f64) {
    let mut c6_secs = 0.0;
    let env = PointMassEnv::new();
    let mut groups = Vec::new();
    for g in 0..GROUPS {
        let t = Instant::now();
        let data = generate_dataset(&env, Tier::Random, DATASET_SIZE, g, &GenerationBudget::default())
            .unwrap()
            .buffer;
        let state = pretrain(data.clone(), PRETRAIN_STEPS, So2Config::desk(), Box::new(PointMassEnv::new()), g).unwrap();
        let pretrained_return = evaluate(&state.policy, &mut PointMassEnv::new(), EVAL_EPISODES, EVAL_SEED).unwrap().0;
        let pretrained = state.checkpoint();
        let seed = |k: u64| 100 * (g + 1) + k;
        let nupc1 = finetune_run(&pretrained, &data, 1, 0.3, seed(0));
        let mut sigma03 = vec![finetune_run(&pretrained, &data, 10, 0.3, seed(0))];
        c6_secs += t.elapsed().as_secs_f64();
        let mut sigma0 = Vec::new();
        if with_sigma_sweep {
            for k in 1..FINETUNE_SEEDS {
                sigma03.push(finetune_run(&pretrained, &data, 10, 0.3, seed(k)));
            }
            for k in 0..FINETUNE_SEEDS {
                sigma0.push(finetune_run(&pretrained, &data, 10, 0.0, seed(k)));
            }
        }
        println!(
            "  group {g}: pretrained {:.1}; N_upc=1 {:.1}; N_upc=10 sigma=0.3 {:?}; sigma=0 {:?}",
            pretrained_return,
            nupc1.final_return,
            sigma03.iter().map(|r| (r.final_return * 10.0).round() / 10.0).collect::<Vec<_>>(),
            sigma0.iter().map(|r| (r.final_return * 10.0).round() / 10.0).collect::<Vec<_>>(),
        );
        groups.push(Group { pretrained, nupc1, sigma03, sigma0 });
    }
    (groups, c6_secs)
}

fn c6_nupc(groups: &[Group], secs: f64) -> Outcome {
    let wins = groups.iter().filter(|g| g.sigma03[0].final_return >= g.nupc1.final_return).count();
    let pairs: Vec<String> = groups
        .iter()
        .map(|g| format!("{:.1} vs {:.1}", g.sigma03[0].final_return, g.nupc1.final_return))
        .collect();
    outcome(
        wins >= 3 && secs < 15.0 * 60.0,
        format!(
            "N_upc=10 >= N_upc=1 in {wins}/4 seeds [{}]; {:.1} min (limit 15)",
            pairs.join(", "),
            secs / 60.0
        ),
    )
}

fn c7_sigma(groups: &[Group]) -> Outcome {
    let stds: Vec<(f64, f64)> = groups
        .iter()
        .map(|g| {
            let s = |runs: &[Run]| mean_std(&runs.iter().map(|r| r.final_return).collect::<Vec<_>>()).1;
            (s(&g.sigma03), s(&g.sigma0))
        })
        .collect();
    let wins = stds.iter().filter(|(a, b)| a <= b).count();
    let shown: Vec<String> = stds.iter().map(|(a, b)| format!("{a:.1} vs {b:.1}")).collect();
    outcome(
        wins >= 3,
        format!("std(sigma=0.3) <= std(sigma=0) in {wins}/4 groups [{}]", shown.join(", ")),
    )
}

fn diag_k(ck: &Checkpoint) -> f64 {
    let est = EnsembleEstimator { ensemble: &ck.ensemble, reduction: Reduction::Min };
    let opts = DiagnoseOptions {
        gamma: 0.99,
        spec: WindowSpec::default(),
        episodes: 5,
        mode: DiagnosticMode::CurrentPolicy,
        seed: 7,
    };
    windowed_kendall(&ck.policy, &est, &mut PointMassEnv::new(), &opts).unwrap().k()
}

fn c8_kendall_improvement(groups: &[Group]) -> Outcome {
    let ks: Vec<(f64, f64)> = groups
        .iter()
        .map(|g| (diag_k(&g.sigma03[0].checkpoint), diag_k(&g.pretrained)))
        .collect();
    let wins = ks.iter().filter(|(f, p)| f > p).count();
    let oracle = OracleCritic { gamma: 0.99, scale: 1.0 };
    let opts = DiagnoseOptions {
        gamma: 0.99,
        spec: WindowSpec::default(),
        episodes: 5,
        mode: DiagnosticMode::CurrentPolicy,
        seed: 7,
    };
    let oracle_k = windowed_kendall(&groups[0].pretrained.policy, &oracle, &mut PointMassEnv::new(), &opts)
        .unwrap()
        .k();
    let shown: Vec<String> = ks.iter().map(|(f, p)| format!("{f:.3} vs {p:.3}")).collect();
    outcome(
        wins >= 3 && oracle_k == 1.0,
        format!("finetuned K > pretrained K in {wins}/4 seeds [{}]; oracle K = {oracle_k}", shown.join(", ")),
    )
}

fn c9_self_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let point_policy = SquashedGaussianPolicy::new(4, 2, &[16, 16], &mut rng).unwrap();
    let opts = DiagnoseOptions {
        gamma: 0.99,
        spec: WindowSpec::default(),
        episodes: 3,
        mode: DiagnosticMode::CurrentPolicy,
        seed: 9,
    };
    let exact = windowed_kendall(
        &point_policy,
        &OracleCritic { gamma: 0.99, scale: 1.0 },
        &mut PointMassEnv::new(),
        &opts,
    )
    .unwrap();
    let nd_exact = exact
        .pairs
        .iter()
        .map(|p| p.normalized_difference.map_or(f64::INFINITY, f64::abs))
        .fold(0.0, f64::max);

    // constant reward 1: true Q is positive everywhere
    let const_policy = SquashedGaussianPolicy::new(1, 1, &[8], &mut rng).unwrap();
    let small = DiagnoseOptions { spec: WindowSpec { windows: 2, window_len: 5 }, episodes: 4, ..opts };
    let scaled = windowed_kendall(
        &const_policy,
        &OracleCritic { gamma: 0.99, scale: 1.1 },
        &mut ConstantEnv::new(),
        &small,
    )
    .unwrap();
    let positive = scaled.pairs.iter().all(|p| p.q_true > 0.0);
    let nd_scaled = scaled
        .pairs
        .iter()
        .map(|p| p.normalized_difference.map_or(f64::INFINITY, |d| (d - 0.10).abs()))
        .fold(0.0, f64::max);
    outcome(
        nd_exact <= 1e-9 && exact.k() == 1.0 && positive && nd_scaled <= 1e-9 && scaled.k() == 1.0,
        format!(
            "Q = true_q: max |nd| {nd_exact:.1e}, K = {}; Q = 1.1 true_q: max |nd - 0.1| {nd_scaled:.1e}, K = {}",
            exact.k(),
            scaled.k()
        ),
    )
}

fn so2(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_so2"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("so2 {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn same_files(a: &Path, b: &Path, names: &[&str]) -> Result<(), String> {
    for name in names {
        let read = |d: &Path| std::fs::read(d.join(name)).map_err(|e| format!("{}: {e}", d.join(name).display()));
        if read(a)? != read(b)? {
            return Err(format!("{name} differs between {} and {}", a.display(), b.display()));
        }
    }
    Ok(())
}

/// Runs `args` into `<root>/<tag>-a` and `<root>/<tag>-b`, then once more
/// from `-a`'s resolved snapshot into `-c`; all three must agree on `files`.
fn rerun_identical(root: &Path, tag: &str, args: &[&str], files: &[&str]) -> Result<(), String> {
    let dir = |s: &str| root.join(format!("{tag}-{s}"));
    for s in ["a", "b"] {
        let out = dir(s).display().to_string();
        let mut full = args.to_vec();
        full.extend(["--out", &out]);
        so2(&full)?;
    }
    let snapshot = dir("a").join("resolved.conf").display().to_string();
    let c = dir("c").display().to_string();
    so2(&[args[0], "--config", &snapshot, "--out", &c])?;
    same_files(&dir("a"), &dir("b"), files)?;
    same_files(&dir("a"), &dir("c"), files)
}

fn c10_reproducibility() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let p = |s: &str| root.join(s).display().to_string();
    let result = (|| {
        rerun_identical(
            root,
            "gen",
            &["gen-data", "--env", "point-mass", "--tier", "random", "--size", "3000", "--seed", "1"],
            &["dataset.o2od", "dataset.o2od.manifest"],
        )?;
        let data = p("gen-a/dataset.o2od");
        rerun_identical(
            root,
            "pre",
            &["pretrain", "--dataset", &data, "--steps", "400", "--seed", "2", "--set", "pretrain.eval_interval=100"],
            &["metrics.csv", "checkpoint.ckpt"],
        )?;
        let ck = p("pre-a/checkpoint.ckpt");
        rerun_identical(
            root,
            "fine",
            &[
                "finetune", "--checkpoint", &ck, "--dataset", &data, "--nupc", "3", "--total-env-steps", "300",
                "--eval-interval", "100", "--seed", "3",
            ],
            &["metrics.csv", "checkpoint.ckpt"],
        )?;
        rerun_identical(
            root,
            "scratch",
            &["finetune", "--from-scratch", "--sigma", "0", "--nupc", "1", "--ensemble", "1", "--total-env-steps", "200", "--eval-interval", "100"],
            &["metrics.csv", "checkpoint.ckpt"],
        )?;
        let fine = p("fine-a/checkpoint.ckpt");
        rerun_identical(root, "eval", &["evaluate", "--checkpoint", &fine, "--episodes", "4", "--seed", "5"], &["evaluate.csv"])?;
        rerun_identical(
            root,
            "diag",
            &["diagnose", "--checkpoint", &fine, "--episodes", "2", "--seed", "6"],
            &["report.txt"],
        )?;
        let report = p("diag-a/report.txt");
        rerun_identical(
            root,
            "fixed",
            &[
                "diagnose", "--mode", "fixed-policy", "--rollout-checkpoint", &ck, "--critic-checkpoint", &fine,
                "--episodes", "2", "--compare", &report,
            ],
            &["report.txt", "comparison.txt"],
        )?;
        Ok::<(), String>(())
    })();
    match result {
        Ok(()) => outcome(true, "gen-data, pretrain, finetune (pretrained and from scratch), evaluate, diagnose (both modes, --compare): reruns and snapshot reruns byte-identical".into()),
        Err(e) => outcome(false, e),
    }
}

fn main() {
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .filter_map(|a| a.trim_start_matches(['C', 'c']).parse().ok())
        .collect();
    let want = |n: u32| selected.is_empty() || selected.contains(&n);

    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |n: u32, name: &'static str, o: Outcome| {
        println!("{} C{n} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    if want(1) {
        report(1, "gradient correctness", c1_gradients());
    }
    if want(2) {
        report(2, "Kendall oracle equivalence", c2_kendall());
    }
    if want(3) {
        report(3, "reduction to SAC", c3_reduction_to_sac());
    }
    if want(4) {
        report(4, "perturbation bounds", c4_perturbation());
    }
    if want(5) {
        report(5, "loop accounting", c5_loop_accounting());
    }
    if want(6) || want(7) || want(8) {
        let (groups, secs) = run_groups(want(7));
        if want(6) {
            report(6, "N_upc ablation trend", c6_nupc(&groups, secs));
        }
        if want(7) {
            report(7, "sigma ablation variance trend", c7_sigma(&groups));
        }
        if want(8) {
            report(8, "Kendall improvement trend", c8_kendall_improvement(&groups));
        }
    }
    if want(9) {
        report(9, "diagnostics self-consistency", c9_self_consistency());
    }
    if want(10) {
        report(10, "CLI reproducibility", c10_reproducibility());
    }
    let failed: Vec<String> = results.iter().filter(|r| !r.2.pass).map(|r| format!("C{}", r.0)).collect();
    println!("acceptance: {} passed, {} failed", results.len() - failed.len(), failed.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
