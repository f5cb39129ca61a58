use std::io::Write;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use super::config::{MarlConfig, ObsMode};
use super::input::InputEncoder;
use super::ppo::ppo_update;
use super::rollout::{collect_rollouts, compute_returns_and_advantages};
use crate::abstraction::PhiMap;
use crate::checkpoint::Checkpoint;
use crate::env::{Action, Observation};
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Mlp, MlpSpec};
use crate::obs_space::ObservationSpace;
use crate::policies::{argmax, sample_index, Controller, PolicyDistribution};
use crate::rng::{derive_seed, derive_seed_idx, SimRng};

/// The policy network every agent executes, together with its input mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedActor {
    pub net: Mlp<f64>,
    pub encoder: InputEncoder,
}

impl SharedActor {
    pub const CHECKPOINT_KIND: &'static str = "actor";

    pub fn init(encoder: InputEncoder, hidden: &[usize], seed: u64) -> Result<Self> {
        let net = Mlp::init(
            &MlpSpec::new(encoder.dim(), hidden, Activation::Tanh, Action::COUNT, Activation::Softmax),
            seed,
        )?;
        Ok(SharedActor { net, encoder })
    }

    pub fn distribution(&self, obs: &Observation) -> Result<PolicyDistribution> {
        let p = self.net.predict_one(&self.encoder.encode(obs)?)?;
        PolicyDistribution::from_slice(&p)
    }

    /// Actor (and optionally evaluator) plus everything needed to rebuild the
    /// input mapping, including the full `φ` table in abstract mode.
    pub fn to_checkpoint(&self, evaluator: Option<&Mlp<f64>>) -> Checkpoint {
        let space = self.encoder.space();
        let mut c = Checkpoint::new(Self::CHECKPOINT_KIND)
            .with_meta("obs_mode", self.encoder.mode().name())
            .with_meta("input_dim", self.encoder.dim())
            .with_meta("q", space.q)
            .with_meta("m", space.m);
        c.nets.insert("actor".into(), self.net.clone());
        if let Some(e) = evaluator {
            c.nets.insert("evaluator".into(), e.clone());
        }
        if let InputEncoder::Abstract(phi) = &self.encoder {
            c = c.with_meta("z_size", phi.z_size());
            c.ints
                .insert("phi_labels".into(), phi.labels().iter().map(|&k| k as u64).collect());
        }
        c
    }

    pub fn from_checkpoint(c: &Checkpoint, path: &Path) -> Result<Self> {
        c.require_kind(Self::CHECKPOINT_KIND, path)?;
        let corrupt = |e: Error| Error::integrity(path, e.to_string());
        let mode = c
            .meta("obs_mode")
            .and_then(ObsMode::parse)
            .ok_or_else(|| Error::integrity(path, "missing or unknown obs_mode"))?;
        let space = ObservationSpace::new(c.meta_parsed("q", path)?, c.meta_parsed("m", path)?).map_err(corrupt)?;
        let encoder = match mode {
            ObsMode::Raw => InputEncoder::Raw(space),
            ObsMode::Abstract => {
                let labels = c.int_array("phi_labels", path)?.iter().map(|&k| k as usize).collect();
                InputEncoder::Abstract(PhiMap::new(space, c.meta_parsed("z_size", path)?, labels).map_err(corrupt)?)
            }
        };
        let net = c.net("actor", path)?.clone();
        if net.in_dim() != encoder.dim() || net.out_dim() != Action::COUNT {
            return Err(Error::integrity(
                path,
                format!("actor is {}->{}, expected {}->{}", net.in_dim(), net.out_dim(), encoder.dim(), Action::COUNT),
            ));
        }
        Ok(SharedActor { net, encoder })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, path)
    }
}

/// How a trained actor picks actions at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    #[default]
    Sample,
    Greedy,
}

#[derive(Debug, Clone)]
pub struct LearnedActor {
    pub actor: SharedActor,
    pub selection: Selection,
}

impl Controller for LearnedActor {
    fn select_action(&self, obs: &Observation, rng: &mut SimRng) -> Result<Action> {
        let p = self.actor.net.predict_one(&self.actor.encoder.encode(obs)?)?;
        let idx = match self.selection {
            Selection::Sample => sample_index(&p, rng),
            Selection::Greedy => argmax(&p),
        };
        Action::from_index(idx)
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UpdateRecord {
    pub update: usize,
    pub episodes_done: usize,
    pub mean_reward: f64,
    pub mean_delivered: f64,
    pub mean_ep_len: f64,
    pub actor_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedPolicy {
    pub actor: SharedActor,
    pub evaluator: Mlp<f64>,
    pub curve: Vec<UpdateRecord>,
}

pub fn train_mappo(config: &MarlConfig, phi: Option<&PhiMap>) -> Result<TrainedPolicy> {
    train_mappo_with(config, phi, |_, _, _| Ok(()))
}

/// Alternates rollouts and PPO updates until `n_train_episodes` episodes have
/// been collected. `on_update` runs after every update with the new record,
/// the actor and the evaluator.
pub fn train_mappo_with<F>(config: &MarlConfig, phi: Option<&PhiMap>, mut on_update: F) -> Result<TrainedPolicy>
where
    F: FnMut(&UpdateRecord, &SharedActor, &Mlp<f64>) -> Result<()>,
{
    config.validate()?;
    let encoder = InputEncoder::new(config.obs_mode, &config.env, phi)?;
    let mut actor = SharedActor::init(encoder, &config.actor_hidden, derive_seed(config.seed, "actor"))?;
    let mut evaluator = Mlp::init(
        &MlpSpec::new(
            actor.encoder.dim(),
            &config.evaluator_hidden,
            Activation::Tanh,
            1,
            Activation::Identity,
        ),
        derive_seed(config.seed, "evaluator"),
    )?;
    let mut actor_opt = Adam::new(&actor.net, config.lr);
    let mut evaluator_opt = Adam::new(&evaluator, config.lr);
    let g = config.rollout_episodes_per_update;
    let n_updates = config.n_train_episodes.div_ceil(g);
    let report_every = (n_updates / 20).max(1);
    let mut curve = Vec::with_capacity(n_updates);
    let mut episodes_done = 0;
    for update in 0..n_updates {
        let episodes = g.min(config.n_train_episodes - episodes_done);
        let mut batch = collect_rollouts(
            &actor,
            &evaluator,
            &config.env,
            episodes,
            derive_seed_idx(config.seed, "update", update as u64),
        )?;
        compute_returns_and_advantages(&mut batch, config.gamma);
        let stats = ppo_update(
            &mut actor.net,
            &mut evaluator,
            &mut actor_opt,
            &mut evaluator_opt,
            &batch,
            config,
        )?;
        episodes_done += episodes;
        let k = batch.summaries.len() as f64;
        let last = stats.last().expect("at least one epoch");
        let record = UpdateRecord {
            update,
            episodes_done,
            mean_reward: batch.summaries.iter().map(|s| s.total_reward).sum::<f64>() / k,
            mean_delivered: batch.summaries.iter().map(|s| s.delivered as f64).sum::<f64>() / k,
            mean_ep_len: batch.summaries.iter().map(|s| s.length as f64).sum::<f64>() / k,
            actor_loss: last.actor_loss,
            value_loss: last.value_loss,
            entropy: last.entropy,
        };
        if update % report_every == 0 || update + 1 == n_updates {
            info!(
                "mappo {} update {update}/{n_updates}: reward {:.2} delivered {:.2} len {:.1} entropy {:.3}",
                config.obs_mode.name(),
                record.mean_reward,
                record.mean_delivered,
                record.mean_ep_len,
                record.entropy
            );
        }
        on_update(&record, &actor, &evaluator)?;
        curve.push(record);
    }
    Ok(TrainedPolicy {
        actor,
        evaluator,
        curve,
    })
}

/// Curve CSV: `update,episodes_done,mean_reward,mean_delivered,mean_ep_len`.
pub fn write_curve_csv<W: Write>(curve: &[UpdateRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["update", "episodes_done", "mean_reward", "mean_delivered", "mean_ep_len"])?;
    for r in curve {
        w.write_record([
            r.update.to_string(),
            r.episodes_done.to_string(),
            format!("{:?}", r.mean_reward),
            format!("{:?}", r.mean_delivered),
            format!("{:?}", r.mean_ep_len),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
