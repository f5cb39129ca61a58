//! Generalisation sweeps: every solution is evaluated over a grid of
//! environment settings, several seeds per cell, with common random numbers
//! across solutions.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline_q::QTable;
use crate::checkpoint::{file_sha256, sha256_hex, write_atomic};
use crate::env::{Action, EnvConfig, Observation};
use crate::error::{Error, Result};
use crate::marl::{evaluate_policy, LearnedActor, ObsMode, Selection, SharedActor};
use crate::policies::{Controller, ExpertKind, RandomPolicy, Sampled};
use crate::rng::{derive_seed_idx, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SolutionKind {
    /// MAPPO on abstracted observations.
    #[serde(rename = "m_ophi")]
    MappoAbstract,
    /// MAPPO on raw observations.
    #[serde(rename = "m_o")]
    MappoRaw,
    /// Tabular Q-learning on raw observations.
    #[serde(rename = "q_o")]
    QLearning,
    #[serde(rename = "grant-based")]
    GrantBased,
    #[serde(rename = "grant-free")]
    GrantFree,
    #[serde(rename = "random")]
    Random,
}

impl SolutionKind {
    pub fn name(self) -> &'static str {
        match self {
            SolutionKind::MappoAbstract => "m_ophi",
            SolutionKind::MappoRaw => "m_o",
            SolutionKind::QLearning => "q_o",
            SolutionKind::GrantBased => "grant-based",
            SolutionKind::GrantFree => "grant-free",
            SolutionKind::Random => "random",
        }
    }

    pub fn needs_checkpoint(self) -> bool {
        matches!(
            self,
            SolutionKind::MappoAbstract | SolutionKind::MappoRaw | SolutionKind::QLearning
        )
    }
}

/// A solution ready to drive UEs.
#[derive(Debug, Clone)]
pub enum Solution {
    Actor(LearnedActor),
    Table(QTable),
    Expert(Sampled<ExpertKind>),
    Random(Sampled<RandomPolicy>),
}

impl Controller for Solution {
    fn select_action(&self, obs: &Observation, rng: &mut SimRng) -> Result<Action> {
        match self {
            Solution::Actor(a) => a.select_action(obs, rng),
            Solution::Table(t) => t.select_action(obs, rng),
            Solution::Expert(e) => e.select_action(obs, rng),
            Solution::Random(r) => r.select_action(obs, rng),
        }
    }
}

/// Where a learned solution comes from. `sha256`, when set, pins the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionSource {
    pub kind: SolutionKind,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub sha256: Option<String>,
}

#[derive(Debug, Clone)]
pub struct LoadedSolution {
    pub kind: SolutionKind,
    pub solution: Solution,
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_sha256: Option<String>,
}

pub fn load_solution(source: &SolutionSource, selection: Selection) -> Result<LoadedSolution> {
    let kind = source.kind;
    let mut digest = None;
    if kind.needs_checkpoint() {
        let path = source
            .checkpoint
            .as_deref()
            .ok_or_else(|| Error::config(format!("solution {} needs a checkpoint", kind.name())))?;
        if !path.exists() {
            return Err(Error::config(format!(
                "checkpoint {} for {} does not exist",
                path.display(),
                kind.name()
            )));
        }
        let actual = file_sha256(path)?;
        if let Some(expected) = &source.sha256 {
            if !expected.eq_ignore_ascii_case(&actual) {
                return Err(Error::integrity(
                    path,
                    format!("sha256 {actual} does not match the pinned {expected}"),
                ));
            }
        }
        digest = Some(actual);
    }
    let solution = match kind {
        SolutionKind::MappoAbstract | SolutionKind::MappoRaw => {
            let path = source.checkpoint.as_deref().unwrap();
            let actor = SharedActor::load(path)?;
            let want = if kind == SolutionKind::MappoAbstract {
                ObsMode::Abstract
            } else {
                ObsMode::Raw
            };
            if actor.encoder.mode() != want {
                return Err(Error::config(format!(
                    "{} expects a {} actor, {} holds a {} one",
                    kind.name(),
                    want.name(),
                    path.display(),
                    actor.encoder.mode().name()
                )));
            }
            Solution::Actor(LearnedActor { actor, selection })
        }
        SolutionKind::QLearning => Solution::Table(QTable::load(source.checkpoint.as_deref().unwrap())?),
        SolutionKind::GrantBased => Solution::Expert(Sampled(ExpertKind::GrantBased)),
        SolutionKind::GrantFree => Solution::Expert(Sampled(ExpertKind::GrantFree)),
        SolutionKind::Random => Solution::Random(Sampled(RandomPolicy)),
    };
    Ok(LoadedSolution {
        kind,
        solution,
        checkpoint: source.checkpoint.clone(),
        checkpoint_sha256: digest,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SweepAxis {
    /// dPDUs per UE.
    P { values: Vec<usize> },
    Tbler { values: Vec<f64> },
    /// Number of UEs crossed with Poisson arrival rates (per slot).
    Agents {
        n_values: Vec<usize>,
        #[serde(default = "default_lambdas")]
        lambdas: Vec<f64>,
    },
}

fn default_lambdas() -> Vec<f64> {
    vec![0.1, 0.5, 1.0]
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::P { .. } => "p",
            SweepAxis::Tbler { .. } => "tbler",
            SweepAxis::Agents { .. } => "agents",
        }
    }

    /// Environment of every grid point, in sweep order.
    pub fn points(&self, base: &EnvConfig) -> Vec<EnvConfig> {
        match self {
            SweepAxis::P { values } => values
                .iter()
                .map(|&p| EnvConfig {
                    p_pdus: p,
                    ..base.clone()
                })
                .collect(),
            SweepAxis::Tbler { values } => values
                .iter()
                .map(|&tbler| EnvConfig {
                    tbler,
                    ..base.clone()
                })
                .collect(),
            SweepAxis::Agents { n_values, lambdas } => n_values
                .iter()
                .flat_map(|&n| {
                    lambdas.iter().map(move |&l| EnvConfig {
                        n_ues: n,
                        arrival_rate: Some(l),
                        ..base.clone()
                    })
                })
                .collect(),
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            SweepAxis::P { values } => values.is_empty(),
            SweepAxis::Tbler { values } => values.is_empty(),
            SweepAxis::Agents { n_values, lambdas } => n_values.is_empty() || lambdas.is_empty(),
        }
    }
}

fn sweep_base_env() -> EnvConfig {
    EnvConfig {
        p_pdus: 10,
        ..EnvConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub solutions: Vec<SolutionSource>,
    pub axis: SweepAxis,
    #[serde(default = "default_seeds")]
    pub n_seeds: usize,
    /// Episodes simulated per seed; the seed's metrics are their average.
    #[serde(default = "one")]
    pub episodes_per_seed: usize,
    #[serde(default = "sweep_base_env")]
    pub base_env: EnvConfig,
    #[serde(default)]
    pub selection: Selection,
}

fn default_seeds() -> usize {
    50
}

fn one() -> usize {
    1
}

impl SweepSpec {
    pub fn new(solutions: Vec<SolutionSource>, axis: SweepAxis) -> Self {
        SweepSpec {
            solutions,
            axis,
            n_seeds: default_seeds(),
            episodes_per_seed: 1,
            base_env: sweep_base_env(),
            selection: Selection::Sample,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.solutions.is_empty() {
            return Err(Error::config("sweep lists no solutions"));
        }
        if self.axis.is_empty() {
            return Err(Error::config("sweep axis has no values"));
        }
        if self.n_seeds == 0 || self.episodes_per_seed == 0 {
            return Err(Error::config("n_seeds and episodes_per_seed must be at least 1"));
        }
        for env in self.axis.points(&self.base_env) {
            env.validate()?;
        }
        Ok(())
    }
}

/// Metrics of one (solution, grid point, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub solution: String,
    pub n_ues: usize,
    pub p_pdus: usize,
    pub tbler: f64,
    /// Empty when every UE is present from the first slot.
    pub lambda: Option<f64>,
    pub seed: usize,
    pub delivered: f64,
    pub ep_len: f64,
    pub collisions: f64,
    pub bad_deletes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub solution: String,
    pub n_ues: usize,
    pub p_pdus: usize,
    pub tbler: f64,
    pub lambda: Option<f64>,
    pub n_seeds: usize,
    pub mean_delivered: f64,
    /// Population standard deviation over seeds.
    pub std_delivered: f64,
    pub mean_ep_len: f64,
    pub collision_rate: f64,
    pub bad_delete_rate: f64,
    /// `N * P`, the most any policy can deliver.
    pub max_delivered: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub aggregate: Vec<AggregateRow>,
}

impl SweepResult {
    pub fn cell(&self, solution: &str, pred: impl Fn(&AggregateRow) -> bool) -> Option<&AggregateRow> {
        self.aggregate.iter().find(|r| r.solution == solution && pred(r))
    }
}

/// Seed `s` of every cell uses the same evaluation randomness, whatever the
/// solution or grid point.
pub fn seed_for(root: u64, s: usize) -> u64 {
    derive_seed_idx(root, "sweep-seed", s as u64)
}

pub fn run_sweep(spec: &SweepSpec, solutions: &[LoadedSolution], root_seed: u64) -> Result<SweepResult> {
    spec.validate()?;
    let points = spec.axis.points(&spec.base_env);
    let cells: Vec<(usize, usize, usize)> = (0..solutions.len())
        .flat_map(|s| (0..points.len()).flat_map(move |p| (0..spec.n_seeds).map(move |k| (s, p, k))))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(s, p, k)| {
            let env = &points[p];
            let m = evaluate_policy(&solutions[s].solution, env, spec.episodes_per_seed, seed_for(root_seed, k))?;
            Ok(SweepRow {
                solution: solutions[s].kind.name().to_string(),
                n_ues: env.n_ues,
                p_pdus: env.p_pdus,
                tbler: env.tbler,
                lambda: env.arrival_rate,
                seed: k,
                delivered: m.mean_delivered,
                ep_len: m.mean_ep_len,
                collisions: m.collision_rate,
                bad_deletes: m.bad_delete_rate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregate = aggregate(&rows);
    Ok(SweepResult { rows, aggregate })
}

pub fn sweep_p(spec: &SweepSpec, solutions: &[LoadedSolution], root_seed: u64) -> Result<SweepResult> {
    expect_axis(spec, "p")?;
    run_sweep(spec, solutions, root_seed)
}

pub fn sweep_tbler(spec: &SweepSpec, solutions: &[LoadedSolution], root_seed: u64) -> Result<SweepResult> {
    expect_axis(spec, "tbler")?;
    run_sweep(spec, solutions, root_seed)
}

pub fn sweep_agents(spec: &SweepSpec, solutions: &[LoadedSolution], root_seed: u64) -> Result<SweepResult> {
    expect_axis(spec, "agents")?;
    run_sweep(spec, solutions, root_seed)
}

fn expect_axis(spec: &SweepSpec, name: &str) -> Result<()> {
    if spec.axis.name() != name {
        return Err(Error::config(format!("expected a {name} sweep, got {}", spec.axis.name())));
    }
    Ok(())
}

fn sorted_mean(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean and population std per (solution, grid point), in first-seen order.
/// Values are sorted before summation, so the result does not depend on the
/// order of the seeds.
pub fn aggregate(rows: &[SweepRow]) -> Vec<AggregateRow> {
    let key = |r: &SweepRow| {
        (
            r.solution.clone(),
            r.n_ues,
            r.p_pdus,
            r.tbler.to_bits(),
            r.lambda.map(f64::to_bits),
        )
    };
    let mut order = Vec::new();
    let mut groups: BTreeMap<_, Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        let k = key(r);
        if !groups.contains_key(&k) {
            order.push(k.clone());
        }
        groups.entry(k).or_default().push(r);
    }
    order
        .into_iter()
        .map(|k| {
            let g = &groups[&k];
            let first = g[0];
            let mean = sorted_mean(g.iter().map(|r| r.delivered).collect());
            let var = sorted_mean(g.iter().map(|r| (r.delivered - mean).powi(2)).collect());
            AggregateRow {
                solution: first.solution.clone(),
                n_ues: first.n_ues,
                p_pdus: first.p_pdus,
                tbler: first.tbler,
                lambda: first.lambda,
                n_seeds: g.len(),
                mean_delivered: mean,
                std_delivered: var.sqrt(),
                mean_ep_len: sorted_mean(g.iter().map(|r| r.ep_len).collect()),
                collision_rate: sorted_mean(g.iter().map(|r| r.collisions).collect()),
                bad_delete_rate: sorted_mean(g.iter().map(|r| r.bad_deletes).collect()),
                max_delivered: first.n_ues * first.p_pdus,
            }
        })
        .collect()
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCheckpoint {
    pub solution: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestOutput {
    pub file: String,
    pub sha256: String,
}

/// Everything that determines a sweep's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub seed: u64,
    pub spec: SweepSpec,
    pub checkpoints: Vec<ManifestCheckpoint>,
    pub outputs: Vec<ManifestOutput>,
}

impl Manifest {
    /// Recomputes every checkpoint hash and compares it with the record.
    pub fn verify_checkpoints(&self) -> Result<()> {
        for c in &self.checkpoints {
            let actual = file_sha256(&c.path)?;
            if actual != c.sha256 {
                return Err(Error::integrity(
                    &c.path,
                    format!("sha256 {actual} differs from manifest value {}", c.sha256),
                ));
            }
        }
        Ok(())
    }
}

/// Writes `<name>.csv` (per seed), `<name>_aggregate.csv` and
/// `<name>_manifest.json` into `dir`, each atomically. The manifest goes last.
pub fn write_sweep_outputs(
    dir: &Path,
    name: &str,
    result: &SweepResult,
    spec: &SweepSpec,
    solutions: &[LoadedSolution],
    config_text: &str,
    seed: u64,
) -> Result<Manifest> {
    let per_seed = to_csv(&result.rows)?;
    let agg = to_csv(&result.aggregate)?;
    let files = [
        (format!("{name}.csv"), per_seed),
        (format!("{name}_aggregate.csv"), agg),
    ];
    let mut outputs = Vec::new();
    for (file, bytes) in &files {
        write_atomic(&dir.join(file), bytes)?;
        outputs.push(ManifestOutput {
            file: file.clone(),
            sha256: sha256_hex(bytes),
        });
    }
    let manifest = Manifest {
        config_sha256: sha256_hex(config_text.as_bytes()),
        seed,
        spec: spec.clone(),
        checkpoints: solutions
            .iter()
            .filter_map(|s| {
                Some(ManifestCheckpoint {
                    solution: s.kind.name().to_string(),
                    path: s.checkpoint.clone()?,
                    sha256: s.checkpoint_sha256.clone()?,
                })
            })
            .collect(),
        outputs,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write_atomic(&dir.join(format!("{name}_manifest.json")), &json)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn src(kind: SolutionKind) -> SolutionSource {
        SolutionSource {
            kind,
            checkpoint: None,
            sha256: None,
        }
    }

    fn row(seed: usize, delivered: f64) -> SweepRow {
        SweepRow {
            solution: "random".into(),
            n_ues: 2,
            p_pdus: 2,
            tbler: 1e-4,
            lambda: None,
            seed,
            delivered,
            ep_len: 10.0 + delivered,
            collisions: 0.1,
            bad_deletes: 0.2,
        }
    }

    #[test]
    fn aggregate_single_seed_and_constants() {
        let a = aggregate(&[row(0, 3.0)]);
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].mean_delivered, 3.0);
        assert_eq!(a[0].std_delivered, 0.0);
        let c = aggregate(&(0..7).map(|s| row(s, 2.5)).collect::<Vec<_>>());
        assert_eq!(c[0].mean_delivered, 2.5);
        assert_eq!(c[0].n_seeds, 7);
    }

    #[test]
    fn aggregate_ignores_seed_order() {
        let rows: Vec<_> = [0.1, 3.0, 1.7, 2.2, 0.3, 4.0].iter().enumerate().map(|(s, &d)| row(s, d)).collect();
        let mut rev = rows.clone();
        rev.reverse();
        rev.swap(1, 4);
        assert_eq!(aggregate(&rows), aggregate(&rev));
        let mean = 11.3 / 6.0;
        assert!((aggregate(&rows)[0].mean_delivered - mean).abs() < 1e-12);
    }

    #[test]
    fn grid_cardinality() {
        let spec = SweepSpec {
            n_seeds: 3,
            ..SweepSpec::new(
                vec![src(SolutionKind::GrantBased), src(SolutionKind::Random)],
                SweepAxis::P {
                    values: (1..=10).collect(),
                },
            )
        };
        let sols: Vec<_> = spec
            .solutions
            .iter()
            .map(|s| load_solution(s, Selection::Sample).unwrap())
            .collect();
        let res = run_sweep(&spec, &sols, 1).unwrap();
        assert_eq!(res.rows.len(), 10 * 2 * 3);
        assert_eq!(res.aggregate.len(), 20);
        for a in &res.aggregate {
            assert!(a.mean_delivered <= a.max_delivered as f64);
        }
        let p1 = res.cell("grant-based", |r| r.p_pdus == 1).unwrap();
        assert!(p1.mean_delivered <= 2.0);
        assert_eq!(res, run_sweep(&spec, &sols, 1).unwrap());
    }

    #[test]
    fn agents_axis_crosses_n_and_lambda() {
        let axis = SweepAxis::Agents {
            n_values: vec![2, 4],
            lambdas: vec![0.5, 1.0],
        };
        let pts = axis.points(&sweep_base_env());
        assert_eq!(pts.len(), 4);
        assert_eq!(pts[3].n_ues, 4);
        assert_eq!(pts[3].arrival_rate, Some(1.0));
        assert!(pts.iter().all(|e| e.p_pdus == 10));
    }

    #[test]
    fn erasure_limit_delivers_nothing() {
        let spec = SweepSpec {
            n_seeds: 4,
            ..SweepSpec::new(
                vec![src(SolutionKind::GrantBased), src(SolutionKind::GrantFree)],
                SweepAxis::Tbler { values: vec![1.0] },
            )
        };
        let sols: Vec<_> = spec
            .solutions
            .iter()
            .map(|s| load_solution(s, Selection::Sample).unwrap())
            .collect();
        let res = sweep_tbler(&spec, &sols, 3).unwrap();
        assert!(res.aggregate.iter().all(|a| a.mean_delivered == 0.0));
        assert!(sweep_p(&spec, &sols, 3).is_err());
    }

    #[test]
    fn learned_solution_without_checkpoint_is_config_error() {
        for kind in [SolutionKind::MappoAbstract, SolutionKind::MappoRaw, SolutionKind::QLearning] {
            let err = load_solution(&src(kind), Selection::Sample).unwrap_err();
            assert!(matches!(err, Error::Config(_)));
        }
    }

    #[test]
    fn pinned_hash_mismatch_is_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.ckpt");
        let t = QTable::new(crate::obs_space::ObservationSpace::new(10, 1).unwrap());
        t.to_checkpoint().save(&path).unwrap();
        let mut s = SolutionSource {
            kind: SolutionKind::QLearning,
            checkpoint: Some(path.clone()),
            sha256: Some("00".repeat(32)),
        };
        let err = load_solution(&s, Selection::Sample).unwrap_err();
        assert!(matches!(err, Error::Integrity { .. }));
        s.sha256 = Some(file_sha256(&path).unwrap());
        assert!(load_solution(&s, Selection::Sample).is_ok());
    }

    #[test]
    fn outputs_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SweepSpec {
            n_seeds: 2,
            ..SweepSpec::new(vec![src(SolutionKind::Random)], SweepAxis::P { values: vec![1, 2] })
        };
        let sols = vec![load_solution(&spec.solutions[0], Selection::Sample).unwrap()];
        let res = run_sweep(&spec, &sols, 0).unwrap();
        let m = write_sweep_outputs(dir.path(), "p", &res, &spec, &sols, "cfg", 0).unwrap();
        let per_seed = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
        assert!(per_seed.starts_with("solution,n_ues,p_pdus,tbler,lambda,seed,delivered,ep_len,collisions,bad_deletes\n"));
        assert_eq!(per_seed.lines().count(), 1 + 4);
        assert_eq!(m.outputs.len(), 2);
        let json = std::fs::read_to_string(dir.path().join("p_manifest.json")).unwrap();
        let back: Manifest = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        back.verify_checkpoints().unwrap();
        let leftovers: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n.starts_with('.'))
            .collect();
        assert!(leftovers.is_empty(), "{leftovers:?}");
    }
}
