use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use macproto::abstraction::{train_abstraction_dyn, z_size_search, AbstractionConfig, PhiMap};
use macproto::baseline_q::{q_train, QConfig, QTable};
use macproto::checkpoint::{sha256_hex, write_atomic, Checkpoint};
use macproto::eval::{load_solution, run_sweep, write_sweep_outputs, Manifest};
use macproto::marl::{train_mappo_with, write_curve_csv, InputEncoder, MarlConfig, ObsMode, SharedActor};
use macproto::{Error, Result};
use serde::Serialize;

use crate::config::{canonical, Loaded};

/// Flags shared by the training commands.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub episodes: Option<usize>,
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

fn abstraction_config(loaded: &Loaded, ov: &Overrides) -> Result<AbstractionConfig> {
    loaded.require_key("abstraction", "experts")?;
    let mut cfg = loaded.config.abstraction.clone().unwrap_or_default();
    if let Some(n) = ov.episodes {
        cfg.n_abs = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct LossRow {
    episode: usize,
    total: f64,
    divergence: f64,
    prior: f64,
}

#[derive(Serialize)]
struct AbstractionSummary<'a> {
    config_sha256: String,
    seed: u64,
    z_size: usize,
    precision: &'a str,
    final_total: f64,
    final_divergence: f64,
    final_prior: f64,
    eval_divergence: f64,
    agreement: &'a [f64],
    distinct_labels: usize,
    histogram: Vec<usize>,
    final_window_change: f64,
    soft_window_change: f64,
    phi_sha256: String,
}

pub fn train_abstraction(loaded: &Loaded, ov: &Overrides) -> Result<PathBuf> {
    let cfg = abstraction_config(loaded, ov)?;
    let seed = loaded.root_seed(ov.seed, None);
    let config_text = canonical("abstraction", &cfg, seed)?;
    let config_sha = sha256_hex(config_text.as_bytes());
    let out = loaded.out_dir(ov.out.as_deref(), "train-abstraction");
    prepare_out(&out)?;
    info!("training abstraction z={} for {} steps, seed {seed}", cfg.z_size, cfg.n_abs);

    let run = train_abstraction_dyn(&cfg, seed)?;
    let phi = run.phi_map()?;
    let ckpt = phi
        .to_checkpoint(Some(&run.model.encoder))
        .with_meta("config_sha256", &config_sha)
        .with_meta("seed", seed)
        .with_meta("precision", run.precision.name());
    let text = ckpt.to_text()?;
    write_atomic(&out.join("phi.ckpt"), text.as_bytes())?;

    let mut table = Vec::new();
    phi.write_table(&mut table).map_err(|e| Error::io(out.join("phi_labels.txt"), e))?;
    write_atomic(&out.join("phi_labels.txt"), &table)?;

    let mut rows: Vec<LossRow> = run
        .history
        .iter()
        .enumerate()
        .map(|(episode, l)| LossRow {
            episode,
            total: l.total,
            divergence: l.divergence,
            prior: l.prior,
        })
        .collect();
    rows.push(LossRow {
        episode: run.history.len(),
        total: run.final_losses.total,
        divergence: run.final_losses.divergence,
        prior: run.final_losses.prior,
    });
    write_csv(&out.join("abstraction_loss.csv"), &rows)?;
    #[derive(Serialize)]
    struct EvalRow {
        episode: usize,
        eval_divergence: f64,
    }
    let eval: Vec<EvalRow> = run
        .eval_history
        .iter()
        .map(|&(episode, eval_divergence)| EvalRow {
            episode,
            eval_divergence,
        })
        .collect();
    write_csv(&out.join("abstraction_eval.csv"), &eval)?;

    let summary = AbstractionSummary {
        config_sha256: config_sha,
        seed,
        z_size: cfg.z_size,
        precision: run.precision.name(),
        final_total: run.final_losses.total,
        final_divergence: run.final_losses.divergence,
        final_prior: run.final_losses.prior,
        eval_divergence: run.evaluation.divergence,
        agreement: &run.evaluation.agreement,
        distinct_labels: run.evaluation.distinct_labels,
        histogram: phi.histogram(),
        final_window_change: run.final_window_change,
        soft_window_change: run.soft_window_change,
        phi_sha256: sha256_hex(text.as_bytes()),
    };
    write_json(&out.join("abstraction_summary.json"), &summary)?;
    info!(
        "abstraction done: eval L_div={:.6}, {} distinct labels, agreement {:?}",
        run.evaluation.divergence, run.evaluation.distinct_labels, run.evaluation.agreement
    );
    Ok(out)
}

pub fn search_z(loaded: &Loaded, ov: &Overrides) -> Result<PathBuf> {
    let cfg = abstraction_config(loaded, ov)?;
    let search = loaded.config.search.clone().unwrap_or_default();
    let seed = loaded.root_seed(ov.seed, None);
    let config_text = canonical("search", &(&cfg, &search), seed)?;
    let out = loaded.out_dir(ov.out.as_deref(), "search-z");
    prepare_out(&out)?;
    info!("z search over {:?}, seed {seed}", search.z_values);
    let report = z_size_search(&cfg, &search.z_values, seed)?;
    write_csv(&out.join("z_search.csv"), &report.entries)?;

    #[derive(Serialize)]
    struct Report<'a> {
        config_sha256: String,
        seed: u64,
        #[serde(flatten)]
        report: &'a macproto::abstraction::ZSearchReport,
    }
    write_json(
        &out.join("z_search.json"),
        &Report {
            config_sha256: sha256_hex(config_text.as_bytes()),
            seed,
            report: &report,
        },
    )?;
    info!("plateau reached at z={}", report.plateau_z);
    Ok(out)
}

pub fn train_policy(loaded: &Loaded, ov: &Overrides, mode: Option<ObsMode>) -> Result<PathBuf> {
    loaded.require_section("policy")?;
    let mut cfg: MarlConfig = loaded.config.policy.clone().unwrap_or_default();
    if let Some(m) = mode {
        cfg.obs_mode = m;
    }
    if let Some(n) = ov.episodes {
        cfg.n_train_episodes = n;
    }
    cfg.seed = loaded.root_seed(ov.seed, Some(cfg.seed));
    cfg.validate()?;
    let phi = match cfg.obs_mode {
        ObsMode::Raw => None,
        ObsMode::Abstract => {
            let path = loaded
                .config
                .phi
                .as_deref()
                .ok_or_else(|| Error::config("abstract mode needs a φ checkpoint (top-level `phi = \"...\"`)"))?;
            Some(PhiMap::load(path)?)
        }
    };
    // Surface a mismatched φ before any output exists.
    InputEncoder::new(cfg.obs_mode, &cfg.env, phi.as_ref())?;
    let mut config_text = canonical("policy", &cfg, cfg.seed)?;
    if let (ObsMode::Abstract, Some(p)) = (cfg.obs_mode, &loaded.config.phi) {
        writeln!(config_text, "phi_sha256 = \"{}\"", macproto::checkpoint::file_sha256(p)?).unwrap();
    }
    let config_sha = sha256_hex(config_text.as_bytes());
    let out = loaded.out_dir(ov.out.as_deref(), "train-policy");
    prepare_out(&out)?;
    let mode_name = cfg.obs_mode.name();
    info!("training {mode_name} MAPPO for {} episodes, seed {}", cfg.n_train_episodes, cfg.seed);

    let every = cfg.checkpoint_every;
    let ckpt_dir = out.join("checkpoints");
    if every > 0 {
        prepare_out(&ckpt_dir)?;
    }
    let stamp = |c: Checkpoint| c.with_meta("config_sha256", &config_sha).with_meta("seed", cfg.seed);
    let trained = train_mappo_with(&cfg, phi.as_ref(), |rec, actor, evaluator| {
        if every > 0 && (rec.update + 1) % every == 0 {
            let c = stamp(actor.to_checkpoint(Some(evaluator))).with_meta("update", rec.update);
            c.save(&ckpt_dir.join(format!("actor_{mode_name}_u{:06}.ckpt", rec.update + 1)))?;
        }
        Ok(())
    })?;
    stamp(trained.actor.to_checkpoint(Some(&trained.evaluator))).save(&out.join(format!("actor_{mode_name}.ckpt")))?;
    let mut curve = Vec::new();
    write_curve_csv(&trained.curve, &mut curve)?;
    write_atomic(&out.join(format!("curve_{mode_name}.csv")), &curve)?;
    if let Some(last) = trained.curve.last() {
        info!(
            "final update {}: mean delivered {:.3}, mean reward {:.3}",
            last.update, last.mean_delivered, last.mean_reward
        );
    }
    Ok(out)
}

pub fn train_q(loaded: &Loaded, ov: &Overrides) -> Result<PathBuf> {
    loaded.require_section("q")?;
    let mut cfg: QConfig = loaded.config.q.clone().unwrap_or_default();
    if let Some(n) = ov.episodes {
        cfg.n_train_episodes = n;
    }
    cfg.seed = loaded.root_seed(ov.seed, Some(cfg.seed));
    cfg.validate()?;
    let config_sha = sha256_hex(canonical("q", &cfg, cfg.seed)?.as_bytes());
    let out = loaded.out_dir(ov.out.as_deref(), "train-q");
    prepare_out(&out)?;
    info!("training Q table for {} episodes, seed {}", cfg.n_train_episodes, cfg.seed);
    let table = q_train(&cfg)?;
    table
        .to_checkpoint()
        .with_meta("config_sha256", &config_sha)
        .with_meta("seed", cfg.seed)
        .save(&out.join("q_table.ckpt"))?;
    let mut text = Vec::new();
    table.export(&mut text).map_err(|e| Error::io(out.join("q_table.txt"), e))?;
    write_atomic(&out.join("q_table.txt"), &text)?;
    info!("Q table has {} visited observations", table.entries.len());
    Ok(out)
}

pub fn sweep(loaded: &Loaded, ov: &Overrides) -> Result<PathBuf> {
    let spec = loaded
        .config
        .sweep
        .clone()
        .ok_or_else(|| Error::config("sweep needs a [sweep] section"))?;
    spec.validate()?;
    let seed = loaded.root_seed(ov.seed, None);
    let config_text = canonical("sweep", &spec, seed)?;
    let solutions = spec
        .solutions
        .iter()
        .map(|s| load_solution(s, spec.selection))
        .collect::<Result<Vec<_>>>()?;
    let out = loaded.out_dir(ov.out.as_deref(), "sweep");
    prepare_out(&out)?;
    let name = format!("sweep_{}", spec.axis.name());
    info!(
        "sweep over {} with {} solutions x {} seeds",
        spec.axis.name(),
        solutions.len(),
        spec.n_seeds
    );
    let result = run_sweep(&spec, &solutions, seed)?;
    write_sweep_outputs(&out, &name, &result, &spec, &solutions, &config_text, seed)?;
    Ok(out)
}

/// Human-readable summary of a checkpoint, or a verification of a sweep manifest.
pub fn inspect(path: &Path) -> Result<String> {
    let mut s = String::new();
    if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::integrity(path, format!("not a sweep manifest: {e}")))?;
        manifest.verify_checkpoints()?;
        writeln!(s, "sweep manifest: axis {}, seed {}", manifest.spec.axis.name(), manifest.seed).unwrap();
        writeln!(s, "config sha256: {}", manifest.config_sha256).unwrap();
        for c in &manifest.checkpoints {
            writeln!(s, "checkpoint {} {} ok", c.solution, c.path.display()).unwrap();
        }
        for o in &manifest.outputs {
            writeln!(s, "output {} {}", o.file, o.sha256).unwrap();
        }
        return Ok(s);
    }

    let c = Checkpoint::load(path)?;
    writeln!(s, "kind: {}", c.kind).unwrap();
    for (k, v) in &c.meta {
        writeln!(s, "{k}: {v}").unwrap();
    }
    for (name, net) in &c.nets {
        writeln!(s, "net {name}: {} -> {}, {} parameters", net.in_dim(), net.out_dim(), net.param_count()).unwrap();
        for (i, l) in net.layers().iter().enumerate() {
            let (rows, cols) = l.weight.dim();
            writeln!(s, "  layer {i}: {rows}x{cols} {}", l.activation.name()).unwrap();
        }
    }
    let histogram = |s: &mut String, phi: &PhiMap| {
        let h = phi.histogram();
        writeln!(
            s,
            "labels: z_size {}, {} distinct, {} observations",
            phi.z_size(),
            phi.distinct_labels(),
            h.iter().sum::<usize>()
        )
        .unwrap();
        for (k, n) in h.iter().enumerate() {
            writeln!(s, "  label {k}: {n}").unwrap();
        }
    };
    match c.kind.as_str() {
        PhiMap::CHECKPOINT_KIND => histogram(&mut s, &PhiMap::from_checkpoint(&c, path)?),
        SharedActor::CHECKPOINT_KIND => {
            let actor = SharedActor::from_checkpoint(&c, path)?;
            writeln!(s, "obs_mode: {}, input dim {}", actor.encoder.mode().name(), actor.encoder.dim()).unwrap();
            if let InputEncoder::Abstract(phi) = &actor.encoder {
                histogram(&mut s, phi);
            }
        }
        QTable::CHECKPOINT_KIND => {
            let t = QTable::from_checkpoint(&c, path)?;
            writeln!(s, "visited observations: {} of {}", t.entries.len(), t.space.len()).unwrap();
        }
        _ => {}
    }
    Ok(s)
}
