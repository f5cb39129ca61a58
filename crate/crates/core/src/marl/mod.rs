//! Multi-agent PPO with a single actor shared by every UE and a value network
//! (the evaluator) used only while training.
//!
//! The actor sees either the raw one-hot observation or the one-hot abstract
//! label `φ(o)`. Advantages are discounted returns minus the evaluator's value,
//! normalised per update batch.

mod config;
mod evaluate;
mod input;
mod ppo;
mod rollout;
mod train;

pub use config::{MarlConfig, ObsMode};
pub use evaluate::{evaluate_policy, run_episode, EpisodeMetrics, EvalMetrics};
pub use input::InputEncoder;
pub use ppo::{actor_objective, ppo_update, ActorObjective, PpoStats};
pub use rollout::{collect_rollouts, compute_returns_and_advantages, EpisodeSummary, RolloutBatch};
pub use train::{
    train_mappo, train_mappo_with, write_curve_csv, LearnedActor, Selection, SharedActor, TrainedPolicy,
    UpdateRecord,
};
