use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use std::path::Path;

use super::loss::argmax_row;
use crate::checkpoint::Checkpoint;
use crate::env::{Action, Observation};
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, MlpSpec};
use crate::obs_space::ObservationSpace;
use crate::policies::ExpertKind;
use crate::rng::{derive_seed, derive_seed_idx};
use crate::scalar::{Precision, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AbstractionConfig {
    /// Number of abstract labels the encoder can emit.
    pub z_size: usize,
    /// Weight of the divergence loss against the prior loss.
    pub beta: f64,
    pub lr_abs: f64,
    /// Number of full-batch gradient steps.
    pub n_abs: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    /// One decoder head per expert.
    pub experts: Vec<ExpertKind>,
    /// Buffer capacity of the observation space.
    pub q: usize,
    /// History depth of the observation space.
    pub m: usize,
    /// Arithmetic used for training.
    pub precision: Precision,
}

impl Default for AbstractionConfig {
    fn default() -> Self {
        AbstractionConfig {
            z_size: 8,
            beta: 1000.0,
            lr_abs: 2.5e-4,
            n_abs: 10_000,
            encoder_hidden: vec![512, 512, 512],
            decoder_hidden: vec![100],
            experts: vec![ExpertKind::GrantBased, ExpertKind::GrantFree],
            q: 10,
            m: 1,
            precision: Precision::F32,
        }
    }
}

impl AbstractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.z_size == 0 {
            return Err(Error::config("z_size must be at least 1"));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::config("beta must be finite and non-negative"));
        }
        if self.experts.is_empty() {
            return Err(Error::config("at least one expert policy is required"));
        }
        if !(self.lr_abs > 0.0) {
            return Err(Error::config("lr_abs must be positive"));
        }
        if self.m == 0 {
            return Err(Error::config("m must be at least 1"));
        }
        if self.encoder_hidden.contains(&0) || self.decoder_hidden.contains(&0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        Ok(())
    }

    pub fn space(&self) -> Result<ObservationSpace> {
        ObservationSpace::new(self.q, self.m)
    }
}

/// Encoder (observation -> label distribution) plus one decoder head per
/// expert (label distribution -> action distribution).
#[derive(Debug, Clone, PartialEq)]
pub struct AbstractionModel<T> {
    pub encoder: Mlp<T>,
    pub decoders: Vec<Mlp<T>>,
    pub experts: Vec<ExpertKind>,
    pub space: ObservationSpace,
}

impl<T: Scalar> AbstractionModel<T> {
    pub fn init(config: &AbstractionConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let space = config.space()?;
        let encoder = Mlp::init(
            &MlpSpec::new(
                space.onehot_dim(),
                &config.encoder_hidden,
                Activation::Relu,
                config.z_size,
                Activation::Softmax,
            ),
            derive_seed(seed, "encoder"),
        )?;
        let decoders = (0..config.experts.len())
            .map(|g| {
                Mlp::init(
                    &MlpSpec::new(
                        config.z_size,
                        &config.decoder_hidden,
                        Activation::Relu,
                        Action::COUNT,
                        Activation::Softmax,
                    ),
                    derive_seed_idx(seed, "decoder", g as u64),
                )
            })
            .collect::<Result<_>>()?;
        Ok(AbstractionModel {
            encoder,
            decoders,
            experts: config.experts.clone(),
            space,
        })
    }

    pub fn z_size(&self) -> usize {
        self.encoder.out_dim()
    }

    /// Label of every row of `inputs` (one-hot encoded observations).
    pub fn labels_for(&self, inputs: ArrayView2<T>) -> Result<Vec<usize>> {
        let enc = self.encoder.predict(inputs)?;
        Ok(enc.outer_iter().map(argmax_row).collect())
    }

    /// The abstraction function: most likely encoder label, lowest index on
    /// ties.
    pub fn phi(&self, obs: &Observation) -> Result<usize> {
        self.space.index_of(obs)?;
        let x: Vec<T> = self
            .space
            .encode_onehot(obs)
            .into_iter()
            .map(T::of)
            .collect();
        let x = ArrayView2::from_shape((1, x.len()), &x).unwrap();
        Ok(self.labels_for(x)?[0])
    }

    /// Labels of the whole observation space, in canonical order.
    pub fn phi_map(&self) -> Result<PhiMap> {
        let all = self.space.enumerate();
        let mut x = Array2::<T>::zeros((all.len(), self.space.onehot_dim()));
        for (i, o) in all.iter().enumerate() {
            for p in self.space.onehot_positions(o) {
                x[[i, p]] = T::one();
            }
        }
        let labels = self.labels_for(x.view())?;
        PhiMap::new(self.space, self.z_size(), labels)
    }

    pub fn cast<U: Scalar>(&self) -> AbstractionModel<U> {
        AbstractionModel {
            encoder: self.encoder.cast(),
            decoders: self.decoders.iter().map(|d| d.cast()).collect(),
            experts: self.experts.clone(),
            space: self.space,
        }
    }
}

/// Tabulated abstraction function over a finite observation space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhiMap {
    space: ObservationSpace,
    z_size: usize,
    labels: Vec<usize>,
}

impl PhiMap {
    pub fn new(space: ObservationSpace, z_size: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != space.len() {
            return Err(Error::contract(format!(
                "label table has {} entries, observation space has {}",
                labels.len(),
                space.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&k| k >= z_size) {
            return Err(Error::contract(format!("label {bad} outside 0..{z_size}")));
        }
        Ok(PhiMap {
            space,
            z_size,
            labels,
        })
    }

    pub fn space(&self) -> ObservationSpace {
        self.space
    }

    pub fn z_size(&self) -> usize {
        self.z_size
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, obs: &Observation) -> Result<usize> {
        Ok(self.labels[self.space.index_of(obs)?])
    }

    /// Observations per label.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.z_size];
        self.labels.iter().for_each(|&k| h[k] += 1);
        h
    }

    pub fn distinct_labels(&self) -> usize {
        self.histogram().iter().filter(|&&c| c > 0).count()
    }

    pub const CHECKPOINT_KIND: &'static str = "phi";

    /// The label table plus, when given, the encoder that produced it.
    pub fn to_checkpoint(&self, encoder: Option<&Mlp<f64>>) -> Checkpoint {
        let mut c = Checkpoint::new(Self::CHECKPOINT_KIND)
            .with_meta("q", self.space.q)
            .with_meta("m", self.space.m)
            .with_meta("z_size", self.z_size);
        c.ints
            .insert("labels".into(), self.labels.iter().map(|&k| k as u64).collect());
        if let Some(enc) = encoder {
            c.nets.insert("encoder".into(), enc.clone());
        }
        c
    }

    pub fn from_checkpoint(c: &Checkpoint, path: &Path) -> Result<Self> {
        c.require_kind(Self::CHECKPOINT_KIND, path)?;
        let q = c.meta_parsed("q", path)?;
        let m = c.meta_parsed("m", path)?;
        let z = c.meta_parsed("z_size", path)?;
        let space = ObservationSpace::new(q, m).map_err(|e| Error::integrity(path, e.to_string()))?;
        let labels = c.int_array("labels", path)?.iter().map(|&k| k as usize).collect();
        PhiMap::new(space, z, labels).map_err(|e| Error::integrity(path, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, path)
    }

    /// Two-column text table: observation index, label.
    pub fn write_table<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# obs_index label (q={} m={} z={})", self.space.q, self.space.m, self.z_size)?;
        for (i, k) in self.labels.iter().enumerate() {
            writeln!(out, "{i} {k}")?;
        }
        Ok(())
    }
}
