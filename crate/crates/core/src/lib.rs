//! Learning channel-access protocols for an uplink TDMA network.
//!
//! The crate bundles the multi-agent environment ([`env`]), hand-coded expert
//! protocols ([`policies`]), an autoencoder that compresses observations into a
//! handful of abstract labels by imitating the experts ([`abstraction`]), a
//! parameter-sharing MAPPO trainer ([`marl`]), a tabular Q-learning baseline
//! ([`baseline_q`]) and the generalisation sweeps ([`eval`]).
//!
//! Networks and losses are generic over [`Scalar`]; the aliases below fix the
//! precision used by the rest of the pipeline.

pub mod error;
pub mod scalar;
pub mod rng;
pub mod env;
pub mod obs_space;
pub mod policies;
pub mod nn;
pub mod abstraction;
pub mod checkpoint;
pub mod marl;
pub mod baseline_q;
pub mod eval;

pub use error::{Error, Result};
pub use scalar::{Precision, Scalar};

pub type Mlp64 = nn::Mlp<f64>;
pub type Mlp32 = nn::Mlp<f32>;
pub type AbstractionModel64 = abstraction::AbstractionModel<f64>;
pub type AbstractionModel32 = abstraction::AbstractionModel<f32>;
