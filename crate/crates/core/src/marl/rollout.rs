use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use super::train::SharedActor;
use crate::env::{Action, EnvConfig, TdmaEnv};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::policies::sample_index;
use crate::rng::{derive_seed_idx, rng_from_seed};

/// Smallest probability fed to `ln`, so log-probabilities stay finite.
pub(crate) const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpisodeSummary {
    pub total_reward: f64,
    pub delivered: usize,
    pub length: usize,
}

/// Agent-steps of one or more episodes, ordered by episode, slot, agent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutBatch {
    pub input_dim: usize,
    /// Row-major `len() x input_dim` actor inputs.
    pub inputs: Vec<f64>,
    pub actions: Vec<usize>,
    /// Log-probability of the action under the behaviour policy.
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// Global reward of the slot, repeated for every agent acting in it.
    pub rewards: Vec<f64>,
    /// True on the last slot of an episode.
    pub dones: Vec<bool>,
    pub agents: Vec<usize>,
    pub episodes: Vec<usize>,
    pub slots: Vec<usize>,
    /// Filled by [`compute_returns_and_advantages`].
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
    pub summaries: Vec<EpisodeSummary>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn inputs_view(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.len(), self.input_dim), &self.inputs).unwrap()
    }

    fn append(&mut self, other: RolloutBatch, episode: usize) {
        self.inputs.extend(other.inputs);
        self.actions.extend(other.actions);
        self.log_probs.extend(other.log_probs);
        self.values.extend(other.values);
        self.rewards.extend(other.rewards);
        self.dones.extend(other.dones);
        self.agents.extend(other.agents);
        self.episodes.extend(std::iter::repeat_n(episode, other.slots.len()));
        self.slots.extend(other.slots);
        self.summaries.extend(other.summaries);
    }
}

fn run_episode(
    actor: &SharedActor,
    evaluator: &Mlp<f64>,
    env_cfg: &EnvConfig,
    env_seed: u64,
    act_seed: u64,
) -> Result<RolloutBatch> {
    let dim = actor.encoder.dim();
    let mut rng = rng_from_seed(act_seed);
    let (mut env, mut obs) = TdmaEnv::reset(EnvConfig {
        rng_seed: env_seed,
        ..env_cfg.clone()
    })?;
    let n = env_cfg.n_ues;
    let mut out = RolloutBatch {
        input_dim: dim,
        ..Default::default()
    };
    let mut summary = EpisodeSummary::default();
    while !env.is_done() {
        let active: Vec<usize> = (0..n).filter(|&i| env.ues()[i].active).collect();
        let mut x = Array2::zeros((active.len(), dim));
        for (row, &i) in active.iter().enumerate() {
            actor
                .encoder
                .encode_into(&obs[i], x.row_mut(row).as_slice_mut().unwrap())?;
        }
        let probs = actor.net.predict(x.view())?;
        let values = evaluator.predict(x.view())?;
        let mut actions = vec![Action::IDLE; n];
        for (row, &i) in active.iter().enumerate() {
            let p = probs.row(row);
            let a = sample_index(p.as_slice().unwrap(), &mut rng);
            actions[i] = Action::from_index(a)?;
            out.actions.push(a);
            out.log_probs.push(p[a].max(PROB_FLOOR).ln());
            out.values.push(values[[row, 0]]);
            out.agents.push(i);
            out.slots.push(env.t());
        }
        out.inputs.extend(x.iter());
        let step = env.step(&actions)?;
        out.rewards.extend(std::iter::repeat_n(step.reward, active.len()));
        out.dones.extend(std::iter::repeat_n(step.done, active.len()));
        summary.total_reward += step.reward;
        obs = step.observations;
    }
    summary.delivered = env.delivered_total();
    summary.length = env.t();
    out.summaries.push(summary);
    Ok(out)
}

/// Runs `g` episodes with actions sampled from the shared actor. Episode `k`
/// uses environment and action seeds derived from `(seed, k)`.
pub fn collect_rollouts(
    actor: &SharedActor,
    evaluator: &Mlp<f64>,
    env_cfg: &EnvConfig,
    g: usize,
    seed: u64,
) -> Result<RolloutBatch> {
    if g == 0 {
        return Err(Error::contract("at least one rollout episode is required"));
    }
    actor.encoder.check_env(env_cfg)?;
    let parts = (0..g)
        .into_par_iter()
        .map(|k| {
            run_episode(
                actor,
                evaluator,
                env_cfg,
                derive_seed_idx(seed, "rollout-env", k as u64),
                derive_seed_idx(seed, "rollout-action", k as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut batch = RolloutBatch {
        input_dim: actor.encoder.dim(),
        ..Default::default()
    };
    for (k, part) in parts.into_iter().enumerate() {
        batch.append(part, k);
    }
    Ok(batch)
}

/// Discounted returns within each episode, `advantage = return - value`,
/// then advantages normalised to zero mean and unit variance.
pub fn compute_returns_and_advantages(batch: &mut RolloutBatch, gamma: f64) {
    let n = batch.len();
    batch.returns = vec![0.0; n];
    let mut running: Vec<(usize, usize, f64)> = Vec::new();
    for j in (0..n).rev() {
        let (ep, agent) = (batch.episodes[j], batch.agents[j]);
        let g = match running.iter_mut().find(|r| r.0 == ep && r.1 == agent) {
            Some(r) => {
                r.2 = batch.rewards[j] + gamma * r.2;
                r.2
            }
            None => {
                running.retain(|r| r.0 == ep);
                running.push((ep, agent, batch.rewards[j]));
                batch.rewards[j]
            }
        };
        batch.returns[j] = g;
    }
    let raw: Vec<f64> = batch
        .returns
        .iter()
        .zip(&batch.values)
        .map(|(g, v)| g - v)
        .collect();
    let mean = raw.iter().sum::<f64>() / n.max(1) as f64;
    let var = raw.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n.max(1) as f64;
    let std = var.sqrt();
    batch.advantages = raw.iter().map(|a| (a - mean) / (std + 1e-8)).collect();
}
