use super::config::ObsMode;
use crate::abstraction::PhiMap;
use crate::env::{EnvConfig, Observation};
use crate::error::{Error, Result};
use crate::obs_space::ObservationSpace;

/// Maps observations to actor inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum InputEncoder {
    Raw(ObservationSpace),
    Abstract(PhiMap),
}

impl InputEncoder {
    /// Encoder for `mode` on environments shaped like `env`.
    pub fn new(mode: ObsMode, env: &EnvConfig, phi: Option<&PhiMap>) -> Result<Self> {
        let enc = match mode {
            ObsMode::Raw => InputEncoder::Raw(ObservationSpace::new(env.buffer_capacity, env.memory_len)?),
            ObsMode::Abstract => {
                let phi = phi.ok_or_else(|| Error::config("abstract observation mode needs a trained φ"))?;
                InputEncoder::Abstract(phi.clone())
            }
        };
        enc.check_env(env)?;
        Ok(enc)
    }

    pub fn mode(&self) -> ObsMode {
        match self {
            InputEncoder::Raw(_) => ObsMode::Raw,
            InputEncoder::Abstract(_) => ObsMode::Abstract,
        }
    }

    pub fn space(&self) -> ObservationSpace {
        match self {
            InputEncoder::Raw(s) => *s,
            InputEncoder::Abstract(phi) => phi.space(),
        }
    }

    /// Fails unless every observation of `env` falls inside the encoder's space.
    pub fn check_env(&self, env: &EnvConfig) -> Result<()> {
        let s = self.space();
        if s.q != env.buffer_capacity || s.m != env.memory_len {
            return Err(Error::config(format!(
                "actor input expects Q={} M={}, environment has Q={} M={}",
                s.q, s.m, env.buffer_capacity, env.memory_len
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            InputEncoder::Raw(s) => s.onehot_dim(),
            InputEncoder::Abstract(phi) => phi.z_size(),
        }
    }

    /// Writes the input vector into `out`, which must be zeroed and `dim()` long.
    pub fn encode_into(&self, obs: &Observation, out: &mut [f64]) -> Result<()> {
        match self {
            InputEncoder::Raw(s) => {
                s.index_of(obs)?;
                for p in s.onehot_positions(obs) {
                    out[p] = 1.0;
                }
            }
            InputEncoder::Abstract(phi) => out[phi.label(obs)?] = 1.0,
        }
        Ok(())
    }

    pub fn encode(&self, obs: &Observation) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.dim()];
        self.encode_into(obs, &mut v)?;
        Ok(v)
    }
}
