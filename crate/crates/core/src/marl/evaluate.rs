use rayon::prelude::*;
use serde::Serialize;

use crate::env::{Action, EnvConfig, TdmaEnv};
use crate::error::Result;
use crate::policies::Controller;
use crate::rng::{derive_seed_idx, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct EpisodeMetrics {
    /// dPDUs delivered, summed over UEs.
    pub delivered: usize,
    pub length: usize,
    /// Slots in which two or more UEs transmitted.
    pub collision_slots: usize,
    pub deletes: usize,
    /// Deletes of a dPDU the BS never received.
    pub bad_deletes: usize,
    pub total_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub n_episodes: usize,
    pub mean_delivered: f64,
    /// Population standard deviation across episodes.
    pub std_delivered: f64,
    pub mean_ep_len: f64,
    /// Collision slots per slot.
    pub collision_rate: f64,
    /// Bad deletes per delete (0 when nothing was deleted).
    pub bad_delete_rate: f64,
    pub episodes: Vec<EpisodeMetrics>,
}

impl EvalMetrics {
    pub fn from_episodes(episodes: Vec<EpisodeMetrics>) -> Self {
        let n = episodes.len().max(1) as f64;
        let mean = episodes.iter().map(|e| e.delivered as f64).sum::<f64>() / n;
        let var = episodes
            .iter()
            .map(|e| (e.delivered as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        let slots: usize = episodes.iter().map(|e| e.length).sum();
        let deletes: usize = episodes.iter().map(|e| e.deletes).sum();
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        EvalMetrics {
            n_episodes: episodes.len(),
            mean_delivered: mean,
            std_delivered: var.sqrt(),
            mean_ep_len: slots as f64 / n,
            collision_rate: ratio(episodes.iter().map(|e| e.collision_slots).sum(), slots),
            bad_delete_rate: ratio(episodes.iter().map(|e| e.bad_deletes).sum(), deletes),
            episodes,
        }
    }
}

/// One episode with every UE driven by `controller`.
pub fn run_episode<C: Controller + ?Sized>(
    controller: &C,
    env_cfg: &EnvConfig,
    env_seed: u64,
    action_seed: u64,
) -> Result<EpisodeMetrics> {
    let (mut env, mut obs) = TdmaEnv::reset(EnvConfig {
        rng_seed: env_seed,
        ..env_cfg.clone()
    })?;
    let mut rng = rng_from_seed(action_seed);
    let mut m = EpisodeMetrics::default();
    while !env.is_done() {
        let mut actions = vec![Action::IDLE; env_cfg.n_ues];
        for (i, a) in actions.iter_mut().enumerate() {
            if env.ues()[i].active {
                *a = controller.select_action(&obs[i], &mut rng)?;
            }
        }
        let step = env.step(&actions)?;
        m.total_reward += step.reward;
        m.collision_slots += step.info.iter().any(|x| x.collision) as usize;
        m.bad_deletes += step.info.iter().filter(|x| x.bad_delete).count();
        m.deletes += step
            .info
            .iter()
            .filter(|x| x.bad_delete || x.good_delete)
            .count();
        obs = step.observations;
    }
    m.delivered = env.delivered_total();
    m.length = env.t();
    Ok(m)
}

/// Runs `n_episodes` episodes. Episode `k` draws its environment and action
/// randomness from `(seed, k)`, so different controllers evaluated with the
/// same seed face identical channel realisations and arrivals.
pub fn evaluate_policy<C: Controller + ?Sized>(
    controller: &C,
    env_cfg: &EnvConfig,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalMetrics> {
    env_cfg.validate()?;
    let episodes = (0..n_episodes as u64)
        .into_par_iter()
        .map(|k| {
            run_episode(
                controller,
                env_cfg,
                derive_seed_idx(seed, "eval-env", k),
                derive_seed_idx(seed, "eval-action", k),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalMetrics::from_episodes(episodes))
}
