//! Tabular Q-learning over raw observation indices.
//!
//! All agents read and update one shared table. At evaluation an observation
//! missing from the table gets a uniformly random action.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use log::info;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::env::{Action, EnvConfig, Observation, TdmaEnv};
use crate::error::{Error, Result};
use crate::obs_space::ObservationSpace;
use crate::policies::{argmax, Controller};
use crate::rng::{derive_seed_idx, rng_from_seed, SimRng};

pub type QRow = [f64; Action::COUNT];

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub space: ObservationSpace,
    pub entries: BTreeMap<usize, QRow>,
}

impl QTable {
    pub const CHECKPOINT_KIND: &'static str = "qtable";

    pub fn new(space: ObservationSpace) -> Self {
        QTable {
            space,
            entries: BTreeMap::new(),
        }
    }

    pub fn get(&self, obs: &Observation) -> Result<Option<&QRow>> {
        Ok(self.entries.get(&self.space.index_of(obs)?))
    }

    /// Greedy action if the observation was visited, else uniformly random.
    pub fn act(&self, obs: &Observation, rng: &mut SimRng) -> Result<Action> {
        match self.get(obs)? {
            Some(row) => Action::from_index(argmax(row)),
            None => Action::from_index(rng.random_range(0..Action::COUNT)),
        }
    }

    /// Audit table: one line per visited observation, `index v0 ... v5`.
    pub fn export<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# obs_index q0 q1 q2 q3 q4 q5 (q={} m={})", self.space.q, self.space.m)?;
        for (idx, row) in &self.entries {
            write!(out, "{idx}")?;
            for v in row {
                write!(out, " {v:?}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn import<R: BufRead>(space: ObservationSpace, input: R) -> Result<Self> {
        let mut t = QTable::new(space);
        for (no, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<q table>", e))?;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let bad = || Error::contract(format!("q table line {}: malformed", no + 1));
            let mut parts = line.split_ascii_whitespace();
            let idx: usize = parts.next().and_then(|x| x.parse().ok()).ok_or_else(bad)?;
            if idx >= space.len() {
                return Err(bad());
            }
            let vals: Vec<f64> = parts.map(|x| x.parse().ok()).collect::<Option<_>>().ok_or_else(bad)?;
            let row: QRow = vals.try_into().map_err(|_| bad())?;
            t.entries.insert(idx, row);
        }
        Ok(t)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(Self::CHECKPOINT_KIND)
            .with_meta("q", self.space.q)
            .with_meta("m", self.space.m);
        c.ints
            .insert("obs".into(), self.entries.keys().map(|&k| k as u64).collect());
        c.floats
            .insert("values".into(), self.entries.values().flatten().copied().collect());
        c
    }

    pub fn from_checkpoint(c: &Checkpoint, path: &Path) -> Result<Self> {
        c.require_kind(Self::CHECKPOINT_KIND, path)?;
        let space = ObservationSpace::new(c.meta_parsed("q", path)?, c.meta_parsed("m", path)?)
            .map_err(|e| Error::integrity(path, e.to_string()))?;
        let keys = c.int_array("obs", path)?;
        let values = c.float_array("values", path)?;
        if values.len() != keys.len() * Action::COUNT {
            return Err(Error::integrity(path, "q table keys and values disagree"));
        }
        let mut t = QTable::new(space);
        for (k, row) in keys.iter().zip(values.chunks(Action::COUNT)) {
            if *k as usize >= space.len() {
                return Err(Error::integrity(path, format!("observation index {k} out of range")));
            }
            t.entries.insert(*k as usize, row.try_into().unwrap());
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, path)
    }
}

impl Controller for QTable {
    fn select_action(&self, obs: &Observation, rng: &mut SimRng) -> Result<Action> {
        self.act(obs, rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub n_train_episodes: usize,
    pub env: EnvConfig,
    pub seed: u64,
}

impl Default for QConfig {
    fn default() -> Self {
        QConfig {
            alpha: 0.1,
            epsilon: 0.1,
            gamma: 0.99,
            n_train_episodes: 20_000,
            env: EnvConfig::default(),
            seed: 0,
        }
    }
}

impl QConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        self.env.validate()
    }
}

fn epsilon_greedy(row: &QRow, epsilon: f64, rng: &mut SimRng) -> usize {
    if rng.random::<f64>() < epsilon {
        rng.random_range(0..Action::COUNT)
    } else {
        argmax(row)
    }
}

/// One-step Q-learning with ε-greedy behaviour. Rows are created (at zero)
/// when an observation is first acted from; a successor that has never been
/// visited bootstraps from zero.
pub fn q_train(config: &QConfig) -> Result<QTable> {
    config.validate()?;
    let space = ObservationSpace::new(config.env.buffer_capacity, config.env.memory_len)?;
    let mut table = QTable::new(space);
    let n = config.env.n_ues;
    let report_every = (config.n_train_episodes / 10).max(1);
    for ep in 0..config.n_train_episodes {
        let mut rng = rng_from_seed(derive_seed_idx(config.seed, "q-action", ep as u64));
        let (mut env, mut obs) = TdmaEnv::reset(EnvConfig {
            rng_seed: derive_seed_idx(config.seed, "q-env", ep as u64),
            ..config.env.clone()
        })?;
        let mut delivered_log = 0;
        while !env.is_done() {
            let mut actions = vec![Action::IDLE; n];
            let mut acted = Vec::with_capacity(n);
            for i in 0..n {
                if !env.ues()[i].active {
                    continue;
                }
                let s = space.index_of(&obs[i])?;
                let row = table.entries.entry(s).or_insert([0.0; Action::COUNT]);
                let a = epsilon_greedy(row, config.epsilon, &mut rng);
                actions[i] = Action::from_index(a)?;
                acted.push((i, s, a));
            }
            let step = env.step(&actions)?;
            for (i, s, a) in acted {
                let next = if step.done {
                    0.0
                } else {
                    let s2 = space.index_of(&step.observations[i])?;
                    table
                        .entries
                        .get(&s2)
                        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                        .unwrap_or(0.0)
                };
                let q = &mut table.entries.get_mut(&s).unwrap()[a];
                *q += config.alpha * (step.reward + config.gamma * next - *q);
            }
            obs = step.observations;
            delivered_log = env.delivered_total();
        }
        if ep % report_every == 0 {
            info!(
                "q-learning episode {ep}/{}: delivered {delivered_log}, table size {}",
                config.n_train_episodes,
                table.entries.len()
            );
        }
    }
    Ok(table)
}
