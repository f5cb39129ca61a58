use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::{Error, Result};

/// What the shared actor is fed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObsMode {
    /// One-hot encoding of the full observation.
    Raw,
    /// One-hot encoding of the abstract label `φ(o)`.
    Abstract,
}

impl ObsMode {
    pub fn name(self) -> &'static str {
        match self {
            ObsMode::Raw => "raw",
            ObsMode::Abstract => "abstract",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "raw" => Some(ObsMode::Raw),
            "abstract" => Some(ObsMode::Abstract),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarlConfig {
    pub gamma: f64,
    /// PPO clipping range `ψ`.
    pub clip: f64,
    pub lr: f64,
    /// Total training episodes.
    pub n_train_episodes: usize,
    /// Episodes collected per update.
    pub rollout_episodes_per_update: usize,
    /// Full-batch passes over each rollout batch.
    pub epochs_per_update: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub obs_mode: ObsMode,
    pub actor_hidden: Vec<usize>,
    pub evaluator_hidden: Vec<usize>,
    pub env: EnvConfig,
    pub seed: u64,
    /// Save the actor every this many updates; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

impl Default for MarlConfig {
    fn default() -> Self {
        MarlConfig {
            gamma: 0.99,
            clip: 0.2,
            lr: 1e-3,
            n_train_episodes: 20_000,
            rollout_episodes_per_update: 10,
            epochs_per_update: 4,
            entropy_coef: 0.01,
            value_coef: 0.5,
            obs_mode: ObsMode::Abstract,
            actor_hidden: vec![64, 64],
            evaluator_hidden: vec![64, 64],
            env: EnvConfig::default(),
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl MarlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(self.clip > 0.0) || !self.clip.is_finite() {
            return Err(Error::config("clip must be positive"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config("lr must be positive"));
        }
        if self.rollout_episodes_per_update == 0 {
            return Err(Error::config("rollout_episodes_per_update must be at least 1"));
        }
        if self.epochs_per_update == 0 {
            return Err(Error::config("epochs_per_update must be at least 1"));
        }
        if !(self.entropy_coef >= 0.0) || !(self.value_coef >= 0.0) {
            return Err(Error::config("loss coefficients must be non-negative"));
        }
        if self.actor_hidden.contains(&0) || self.evaluator_hidden.contains(&0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        self.env.validate()
    }
}
