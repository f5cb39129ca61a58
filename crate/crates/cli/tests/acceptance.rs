//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! The run trains the full-size abstraction and several MAPPO policies, so it
//! takes a while. A failing criterion is reported, not hidden. Set
//! `MACPROTO_ACCEPT_STRICT=1` to make any FAIL turn into a nonzero exit.
//! `MACPROTO_ACCEPT_ZSEARCH_STEPS` sets the per-model budget of the z-search
//! report inside criterion 6. `MACPROTO_ACCEPT_ONLY=1,2,7` runs a subset.

#[path = "../../core/tests/support/env_table.rs"]
mod env_table;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use macproto::abstraction::{
    divergence_loss, kl_divergence, loss_and_gradients, prior_loss, total_loss, train_abstraction_dyn,
    z_size_search, AbstractionConfig, AbstractionModel, Dataset, PhiMap,
};
use macproto::env::{Action, EnvConfig, Observation, TdmaEnv};
use macproto::eval::{run_sweep, LoadedSolution, Solution, SolutionKind, SolutionSource, SweepAxis, SweepResult, SweepSpec};
use macproto::marl::{
    actor_objective, evaluate_policy, run_episode, train_mappo, LearnedActor, MarlConfig, ObsMode, Selection,
    SharedActor,
};
use macproto::nn::{softmax_rows, Activation, Mlp, MlpSpec};
use macproto::obs_space::enumerate_observations;
use macproto::policies::{ExpertKind, RandomPolicy, Sampled};
use macproto::rng::{derive_seed_idx, rng_from_seed};
use ndarray::Array2;
use rand::Rng;

const EVAL_ROOT: u64 = 20_240_601;
const SWEEP_SEEDS: usize = 20;
const DESK_EPISODES: usize = 5_000;
const POLICY_SEEDS: [u64; 3] = [0, 1, 2];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Artifacts produced by earlier criteria and consumed by later ones.
#[derive(Default)]
struct Shared {
    phi: Option<PhiMap>,
    /// Best abstract-mode actor at the training point.
    m_ophi: Option<SharedActor>,
    /// Best raw-mode actor at the training point.
    m_o: Option<SharedActor>,
}

fn selected(n: u32) -> bool {
    match std::env::var("MACPROTO_ACCEPT_ONLY") {
        Ok(list) if !list.trim().is_empty() => list.split(',').any(|x| x.trim().parse() == Ok(n)),
        _ => true,
    }
}

fn run(n: u32, results: &mut Vec<(u32, bool)>, f: impl FnOnce() -> Verdict) {
    if !selected(n) {
        return;
    }
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f));
    let secs = start.elapsed().as_secs_f64();
    let v = outcome.unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        verdict(false, format!("aborted: {msg}"))
    });
    println!(
        "criterion {n:>2}: {} ({secs:.1}s) {}",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail
    );
    results.push((n, v.pass));
}

fn c1_cardinality() -> Verdict {
    let start = Instant::now();
    let obs = enumerate_observations(10, 1).unwrap();
    let distinct: HashSet<Observation> = obs.iter().cloned().collect();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        obs.len() == 2178 && distinct.len() == 2178 && secs < 1.0,
        format!("|O| = {} ({} distinct) in {secs:.3}s", obs.len(), distinct.len()),
    )
}

fn c2_oracle() -> Verdict {
    let start = Instant::now();
    let slots = env_table::verify_all_sequences();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        secs < 10.0,
        format!("all 46656 sequences match the table ({slots} slots compared) in {secs:.2}s"),
    )
}

fn c3_codomain() -> Verdict {
    let mut rng = rng_from_seed(3);
    let mut counts = BTreeMap::new();
    let mut other = 0usize;
    let mut steps = 0usize;
    let mut episode = 0u64;
    while steps < 1_000_000 {
        let cfg = EnvConfig {
            n_ues: rng.random_range(1..=6),
            p_pdus: rng.random_range(1..=10),
            tbler: [0.0, 1e-4, 1e-2, 0.1, 0.5, 1.0][rng.random_range(0..6)],
            arrival_rate: if rng.random::<bool>() { Some(rng.random_range(0.1..2.0)) } else { None },
            rng_seed: episode,
            ..EnvConfig::default()
        };
        episode += 1;
        let (mut env, _) = TdmaEnv::reset(cfg.clone()).unwrap();
        loop {
            let actions: Vec<Action> = (0..cfg.n_ues)
                .map(|_| Action::from_index(rng.random_range(0..Action::COUNT)).unwrap())
                .collect();
            let res = env.step(&actions).unwrap();
            steps += 1;
            if [-1.0, -3.0, 3.0].contains(&res.reward) {
                *counts.entry(res.reward.to_string()).or_insert(0usize) += 1;
            } else {
                other += 1;
            }
            if res.done || steps >= 1_000_000 {
                break;
            }
        }
    }
    verdict(
        other == 0,
        format!("{steps} steps over {episode} episodes: {counts:?}, {other} outside {{-1,-3,3}}"),
    )
}

fn rel_ok(fd: f64, an: f64) -> (bool, f64) {
    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
    (rel < 1e-4 || (fd - an).abs() < 1e-8, rel)
}

fn c4_gradients() -> Verdict {
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    let mut checked = 0usize;
    let mut note = |what: &str, i: usize, fd: f64, an: f64| {
        let (ok, rel) = rel_ok(fd, an);
        checked += 1;
        if fd.abs().max(an.abs()) > 1e-6 {
            worst = worst.max(rel);
        }
        if !ok && bad.len() < 5 {
            bad.push(format!("{what}[{i}] fd {fd:.6e} vs {an:.6e}"));
        }
    };

    // MLPs with every activation pairing, loss sum(c * output).
    let mut rng = rng_from_seed(4);
    use Activation::*;
    for (k, acts) in [[Tanh, Softmax], [Relu, Identity], [Tanh, Tanh], [Relu, Softmax]].iter().enumerate() {
        let spec = MlpSpec::new(5, &[7, 4], acts[0], 3, acts[1]);
        let mut net = Mlp::<f64>::init(&spec, 40 + k as u64).unwrap();
        let mut p = net.params_flat();
        for v in p.iter_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
        net.set_params_flat(&p).unwrap();
        let x = Array2::from_shape_fn((4, 5), |_| rng.random_range(-1.0..1.0));
        let c = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let loss = |params: &[f64]| {
            let mut n = net.clone();
            n.set_params_flat(params).unwrap();
            (n.predict(x.view()).unwrap() * &c).sum()
        };
        let cache = net.forward(x.view()).unwrap();
        let an = net.backward(&cache, c.view()).unwrap().grads.flatten();
        for i in 0..p.len() {
            let (mut plus, mut minus) = (p.clone(), p.clone());
            plus[i] += h;
            minus[i] -= h;
            note("mlp", i, (loss(&plus) - loss(&minus)) / (2.0 * h), an[i]);
        }
    }

    // Abstraction total loss on the Q=1, M=1, z=3 instance.
    let cfg = AbstractionConfig {
        z_size: 3,
        q: 1,
        m: 1,
        encoder_hidden: vec![6, 5],
        decoder_hidden: vec![4],
        precision: macproto::Precision::F64,
        ..AbstractionConfig::default()
    };
    let data = Dataset::<f64>::full(&cfg.space().unwrap(), &cfg.experts).unwrap();
    let model = AbstractionModel::<f64>::init(&cfg, 12).unwrap();
    let beta = 3.0;
    let (_, grads) = loss_and_gradients(&model, &data, beta).unwrap();
    let nets = 1 + model.decoders.len();
    for which in 0..nets {
        let (base, an) = if which == 0 {
            (model.encoder.params_flat(), grads.encoder.flatten())
        } else {
            (model.decoders[which - 1].params_flat(), grads.decoders[which - 1].flatten())
        };
        for i in 0..base.len() {
            let eval = |d: f64| {
                let mut m = model.clone();
                let mut p = base.clone();
                p[i] += d;
                if which == 0 {
                    m.encoder.set_params_flat(&p).unwrap();
                } else {
                    m.decoders[which - 1].set_params_flat(&p).unwrap();
                }
                total_loss(&m, &data, beta).unwrap()
            };
            note("abstraction", i, (eval(h) - eval(-h)) / (2.0 * h), an[i]);
        }
    }

    // PPO actor loss with respect to the logits, mixing clipped and unclipped samples.
    let logits: Array2<f64> = Array2::from_shape_fn((5, 6), |_| rng.random_range(-1.5..1.5));
    let actions = [0usize, 3, 5, 2, 1];
    let p0 = softmax_rows(&logits);
    let old: Vec<f64> = actions
        .iter()
        .enumerate()
        .map(|(i, &a)| p0[[i, a]].ln() + [0.05, -0.5, 0.4, 0.01, -0.02][i])
        .collect();
    let adv = [0.8, 1.1, -0.6, -1.4, 0.3];
    let an = actor_objective(p0.view(), &actions, &old, &adv, 0.2, 0.01).grad_logits;
    for i in 0..5 {
        for j in 0..6 {
            let eval = |d: f64| {
                let mut z = logits.clone();
                z[[i, j]] += d;
                actor_objective(softmax_rows(&z).view(), &actions, &old, &adv, 0.2, 0.01).loss
            };
            note("ppo", i * 6 + j, (eval(h) - eval(-h)) / (2.0 * h), an[[i, j]]);
        }
    }

    verdict(
        bad.is_empty(),
        format!(
            "{checked} partial derivatives (MLP, abstraction loss, PPO logits), worst relative error {worst:.2e}{}",
            if bad.is_empty() { String::new() } else { format!("; mismatches: {}", bad.join("; ")) }
        ),
    )
}

fn c5_analytic() -> Verdict {
    let mut errs = Vec::new();
    let mut rng = rng_from_seed(5);
    let mut p: Vec<f64> = (0..6).map(|_| rng.random_range(0.01..1.0)).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    errs.push(("KL(p||p)", kl_divergence(&p, &p).unwrap(), 0.0));
    errs.push(("KL([1,0]||[.5,.5])", kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap(), 2f64.ln()));

    // One grant-based head, one observation whose expert action is idle, uniform decoder.
    let cfg = AbstractionConfig {
        z_size: 8,
        q: 1,
        m: 1,
        encoder_hidden: vec![4],
        decoder_hidden: vec![3],
        experts: vec![ExpertKind::GrantBased],
        precision: macproto::Precision::F64,
        ..AbstractionConfig::default()
    };
    let space = cfg.space().unwrap();
    let mut data = Dataset::<f64>::from_observations(&space, &[Observation::initial(0, 1)], &cfg.experts).unwrap();
    data.targets[0].fill(0.0);
    data.targets[0][[0, 0]] = 1.0;
    let mut model = AbstractionModel::<f64>::init(&cfg, 5).unwrap();
    let zeros = vec![0.0; model.decoders[0].param_count()];
    model.decoders[0].set_params_flat(&zeros).unwrap();
    errs.push(("L_div uniform decoder", divergence_loss(&model, &data).unwrap(), 6f64.ln()));

    // Encoder forced one-hot: zero weights, a dominant bias on label 0.
    let mut enc = vec![0.0; model.encoder.param_count()];
    let n = enc.len();
    enc[n - 8] = 800.0;
    model.encoder.set_params_flat(&enc).unwrap();
    errs.push(("L_prior one-hot z=8", prior_loss(&model, &data).unwrap(), 8f64.ln()));

    let worst = errs.iter().map(|(_, got, want)| (got - want).abs()).fold(0.0, f64::max);
    let detail: Vec<String> = errs.iter().map(|(n, got, want)| format!("{n}={got:.12} (want {want:.12})")).collect();
    verdict(worst <= 1e-9, format!("max |error| {worst:.1e}; {}", detail.join(", ")))
}

fn c6_abstraction(shared: &mut Shared) -> Verdict {
    let cfg = AbstractionConfig::default();
    let run = train_abstraction_dyn(&cfg, 0).unwrap();
    let phi = run.phi_map().unwrap();
    let gb = cfg.experts.iter().position(|&e| e == ExpertKind::GrantBased).unwrap();
    let agreement = run.evaluation.agreement[gb];
    let distinct = run.evaluation.distinct_labels;
    let change = run.final_window_change;
    let hard = change < 0.05 && distinct <= 8 && agreement >= 0.95;
    let tail_from = cfg.n_abs - cfg.n_abs / 10;
    let (lo, hi) = run
        .eval_history
        .iter()
        .filter(|(step, _)| *step >= tail_from)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, v)| (lo.min(v), hi.max(v)));
    let mut detail = format!(
        "z=8 beta=1000 lr=2.5e-4 N_abs=10000 ({}): final-10% evaluation L_div change {:.2}% \
         (range over the window {lo:.3}..{hi:.3}; soft training L_div {:.2}%), {} distinct labels {:?}, grant-based agreement {:.2}%, \
         grant-free agreement {:.2}%, eval L_div {:.5}",
        run.precision.name(),
        100.0 * change,
        100.0 * run.soft_window_change,
        distinct,
        phi.histogram(),
        100.0 * agreement,
        100.0 * run.evaluation.agreement[1 - gb],
        run.evaluation.divergence
    );
    shared.phi = Some(phi);

    let steps: usize = std::env::var("MACPROTO_ACCEPT_ZSEARCH_STEPS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(1_000);
    let mut plateaus = Vec::new();
    for seed in 0..3u64 {
        let base = AbstractionConfig {
            n_abs: steps,
            ..AbstractionConfig::default()
        };
        let report = z_size_search(&base, &(1..=10).collect::<Vec<_>>(), seed).unwrap();
        let curve: Vec<String> = report
            .entries
            .iter()
            .map(|e| format!("{}:{:.3}", e.z, e.eval_divergence))
            .collect();
        println!("    z-search seed {seed} ({steps} steps): {}", curve.join(" "));
        plateaus.push(report.plateau_z);
        if report.plateau_z <= 8 {
            break;
        }
    }
    let soft = plateaus.iter().any(|&z| z <= 8);
    detail.push_str(&format!(
        "; soft z-search report ({steps} steps per model): plateau z {:?} -> {}",
        plateaus,
        if soft { "at or below 8" } else { "above 8" }
    ));
    verdict(hard, detail)
}

fn c7_experts() -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;
    for p in 1..=10 {
        let cfg = EnvConfig {
            n_ues: 1,
            p_pdus: p,
            tbler: 0.0,
            ..EnvConfig::default()
        };
        let gf = run_episode(&Sampled(ExpertKind::GrantFree), &cfg, p as u64, 1).unwrap();
        let gb = run_episode(&Sampled(ExpertKind::GrantBased), &cfg, p as u64, 2).unwrap();
        ok &= gf.delivered == p && gf.length == 2 * p && gb.delivered == p && gb.length <= 4 * p;
        notes.push(format!("P={p}: gf {}/{} slots, gb {}/{} slots", gf.delivered, gf.length, gb.delivered, gb.length));
    }
    verdict(ok, notes.join("; "))
}

fn train_point_eval(actor: &SharedActor, seed: u64) -> f64 {
    let controller = LearnedActor {
        actor: actor.clone(),
        selection: Selection::Sample,
    };
    evaluate_policy(&controller, &EnvConfig::default(), 200, derive_seed_idx(EVAL_ROOT, "train-point", seed))
        .unwrap()
        .mean_delivered
}

/// Trains one actor per seed and returns (seed, delivered at the training point, actor).
fn train_desk(mode: ObsMode, phi: Option<&PhiMap>) -> Vec<(u64, f64, SharedActor)> {
    POLICY_SEEDS
        .iter()
        .map(|&seed| {
            let cfg = MarlConfig {
                obs_mode: mode,
                n_train_episodes: DESK_EPISODES,
                seed,
                ..MarlConfig::default()
            };
            let trained = train_mappo(&cfg, phi).unwrap();
            let delivered = train_point_eval(&trained.actor, seed);
            println!("    {} seed {seed}: {delivered:.3} delivered of 4 over 200 episodes", mode.name());
            (seed, delivered, trained.actor)
        })
        .collect()
}

fn best(runs: &[(u64, f64, SharedActor)]) -> SharedActor {
    runs.iter()
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .unwrap()
        .2
        .clone()
}

fn c8_desk_training(shared: &mut Shared) -> Verdict {
    let phi = shared.phi.as_ref().expect("criterion 6 produced no φ");
    let runs = train_desk(ObsMode::Abstract, Some(phi));
    let passing = runs.iter().filter(|r| r.1 >= 3.6).count();
    shared.m_ophi = Some(best(&runs));
    let raw = train_desk(ObsMode::Raw, None);
    shared.m_o = Some(best(&raw));
    let list = |r: &[(u64, f64, SharedActor)]| r.iter().map(|x| format!("{:.3}", x.1)).collect::<Vec<_>>().join(", ");
    verdict(
        passing >= 2,
        format!(
            "abstract MAPPO, {DESK_EPISODES} episodes: delivered [{}] for seeds {POLICY_SEEDS:?}, {passing}/3 reach 3.6 \
             (raw MAPPO for reference: [{}])",
            list(&runs),
            list(&raw)
        ),
    )
}

fn loaded(kind: SolutionKind, solution: Solution) -> LoadedSolution {
    LoadedSolution {
        kind,
        solution,
        checkpoint: None,
        checkpoint_sha256: None,
    }
}

fn actor_solution(kind: SolutionKind, actor: &SharedActor) -> LoadedSolution {
    loaded(
        kind,
        Solution::Actor(LearnedActor {
            actor: actor.clone(),
            selection: Selection::Sample,
        }),
    )
}

fn sweep(shared: &Shared, axis: SweepAxis, with_random: bool) -> SweepResult {
    let mut sols = vec![
        actor_solution(SolutionKind::MappoAbstract, shared.m_ophi.as_ref().expect("no abstract actor")),
        actor_solution(SolutionKind::MappoRaw, shared.m_o.as_ref().expect("no raw actor")),
    ];
    if with_random {
        sols.push(loaded(SolutionKind::Random, Solution::Random(Sampled(RandomPolicy))));
    }
    let sources = sols
        .iter()
        .map(|s| SolutionSource {
            kind: s.kind,
            checkpoint: None,
            sha256: None,
        })
        .collect();
    let spec = SweepSpec {
        n_seeds: SWEEP_SEEDS,
        ..SweepSpec::new(sources, axis)
    };
    run_sweep(&spec, &sols, EVAL_ROOT).unwrap()
}

fn mean(r: &SweepResult, sol: &str, pred: impl Fn(&macproto::eval::AggregateRow) -> bool) -> f64 {
    r.cell(sol, pred).expect("missing sweep cell").mean_delivered
}

fn c9_generalise_p(shared: &Shared) -> Verdict {
    let r = sweep(shared, SweepAxis::P { values: vec![2, 10] }, false);
    let at = |sol: &str, p: usize| mean(&r, sol, |a| a.p_pdus == p);
    let (phi10, raw10) = (at("m_ophi", 10), at("m_o", 10));
    let absolute = phi10 >= 0.8 * 20.0;
    let ratio = phi10 >= 1.5 * raw10;
    verdict(
        absolute && ratio,
        format!(
            "P=10 over {SWEEP_SEEDS} seeds: M_Oφ {phi10:.2} (need >= 16: {}), M_O {raw10:.2}, ratio {:.2} (need >= 1.5: {}); \
             P=2: M_Oφ {:.2}, M_O {:.2}",
            if absolute { "ok" } else { "no" },
            phi10 / raw10.max(f64::MIN_POSITIVE),
            if ratio { "ok" } else { "no" },
            at("m_ophi", 2),
            at("m_o", 2)
        ),
    )
}

fn c10_generalise_tbler(shared: &Shared) -> Verdict {
    let r = sweep(shared, SweepAxis::Tbler { values: vec![1e-4, 1e-3, 1e-2, 1e-1] }, false);
    let at = |sol: &str, t: f64| mean(&r, sol, |a| a.tbler == t);
    let (lo, hi) = (at("m_ophi", 1e-4), at("m_ophi", 1e-1));
    let cells: Vec<String> = [1e-4, 1e-3, 1e-2, 1e-1]
        .iter()
        .map(|&t| format!("{t:e}: {:.2}/{:.2}", at("m_ophi", t), at("m_o", t)))
        .collect();
    verdict(
        hi >= 0.7 * lo,
        format!(
            "M_Oφ at TBLER 1e-1 keeps {:.1}% of its 1e-4 value ({hi:.2} vs {lo:.2}); M_Oφ/M_O by TBLER: {}",
            100.0 * hi / lo.max(f64::MIN_POSITIVE),
            cells.join(", ")
        ),
    )
}

fn c11_generalise_n(shared: &Shared) -> Verdict {
    let r = sweep(
        shared,
        SweepAxis::Agents {
            n_values: vec![2, 4],
            lambdas: vec![0.5, 1.0],
        },
        true,
    );
    let mut ok = true;
    let mut cells = Vec::new();
    for n in [2usize, 4] {
        for lambda in [0.5, 1.0] {
            let at = |sol: &str| mean(&r, sol, |a| a.n_ues == n && a.lambda == Some(lambda));
            let (phi, raw, rnd) = (at("m_ophi"), at("m_o"), at("random"));
            let beats_random = phi > rnd;
            let beats_raw = n != 4 || phi > raw;
            ok &= beats_random && beats_raw;
            cells.push(format!(
                "N={n} λ={lambda}: M_Oφ {phi:.2}, M_O {raw:.2}, random {rnd:.2}{}",
                if beats_random && beats_raw { "" } else { " (miss)" }
            ));
        }
    }
    verdict(ok, cells.join("; "))
}

fn files_in(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn c12_determinism() -> Verdict {
    let bin = env!("CARGO_BIN_EXE_macproto");
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = "seed = 11\n\
        phi = \"phi/phi.ckpt\"\n\
        [abstraction]\n\
        experts = [\"grant-based\", \"grant-free\"]\n\
        n_abs = 40\n\
        encoder_hidden = [32, 32]\n\
        [search]\n\
        z_values = [1, 2, 4]\n\
        [policy]\n\
        n_train_episodes = 60\n\
        checkpoint_every = 2\n\
        [q]\n\
        n_train_episodes = 200\n";
    let exec = |args: &[&str], cfg: &Path| {
        let out = Command::new(bin)
            .args(args)
            .arg("--config")
            .arg(cfg)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    let base = root.join("base.toml");
    fs::write(&base, config.replace("phi = \"phi/phi.ckpt\"\n", "")).unwrap();
    exec(&["train-abstraction", "--out", root.join("phi").to_str().unwrap()], &base);
    let cfg = root.join("run.toml");
    fs::write(&cfg, config).unwrap();
    exec(&["train-policy", "--mode", "raw", "--out", root.join("raw").to_str().unwrap()], &cfg);
    exec(&["train-policy", "--mode", "abstract", "--out", root.join("abs").to_str().unwrap()], &cfg);
    exec(&["train-q", "--out", root.join("q").to_str().unwrap()], &cfg);
    let sweep_cfg = root.join("sweep.toml");
    fs::write(
        &sweep_cfg,
        "seed = 5\n[sweep]\nn_seeds = 4\naxis = { kind = \"p\", values = [1, 3, 5] }\nsolutions = [\n\
         { kind = \"m_ophi\", checkpoint = \"abs/actor_abstract.ckpt\" },\n\
         { kind = \"m_o\", checkpoint = \"raw/actor_raw.ckpt\" },\n\
         { kind = \"q_o\", checkpoint = \"q/q_table.ckpt\" },\n\
         { kind = \"grant-free\" },\n]\n",
    )
    .unwrap();

    let commands: Vec<(&str, Vec<&str>, &Path)> = vec![
        ("train-abstraction", vec!["train-abstraction"], &base),
        ("search-z", vec!["search-z"], &base),
        ("train-policy raw", vec!["train-policy", "--mode", "raw"], &cfg),
        ("train-policy abstract", vec!["train-policy", "--mode", "abstract"], &cfg),
        ("train-q", vec!["train-q"], &cfg),
        ("sweep", vec!["sweep"], &sweep_cfg),
    ];
    let mut notes = Vec::new();
    let mut ok = true;
    for (i, (name, args, cfg)) in commands.iter().enumerate() {
        let outs: Vec<_> = (0..2)
            .map(|rep| {
                let out = root.join(format!("det{i}_{rep}"));
                let mut a = args.clone();
                let o = out.to_str().unwrap().to_string();
                a.extend(["--out", o.as_str()]);
                exec(&a, cfg);
                files_in(&out)
            })
            .collect();
        let same = outs[0] == outs[1] && !outs[0].is_empty();
        ok &= same;
        notes.push(format!("{name}: {} files {}", outs[0].len(), if same { "identical" } else { "DIFFER" }));
    }
    verdict(ok, notes.join("; "))
}

fn main() {
    let start = Instant::now();
    let mut results = Vec::new();
    let mut shared = Shared::default();
    run(1, &mut results, c1_cardinality);
    run(2, &mut results, c2_oracle);
    run(3, &mut results, c3_codomain);
    run(4, &mut results, c4_gradients);
    run(5, &mut results, c5_analytic);
    run(6, &mut results, || c6_abstraction(&mut shared));
    run(7, &mut results, c7_experts);
    run(8, &mut results, || c8_desk_training(&mut shared));
    run(9, &mut results, || c9_generalise_p(&shared));
    run(10, &mut results, || c10_generalise_tbler(&shared));
    run(11, &mut results, || c11_generalise_n(&shared));
    run(12, &mut results, c12_determinism);
    let failed: Vec<u32> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed in {:.0}s{}",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64(),
        if failed.is_empty() { String::new() } else { format!("; failed: {failed:?}") }
    );
    if !failed.is_empty() && std::env::var("MACPROTO_ACCEPT_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
