//! Divergence and prior losses of the abstraction autoencoder, with their
//! gradients.
//!
//! For one batch of `n` observations with encoder output `e` (softmax over `z`
//! labels) and decoder outputs `q_g = dec_g(e)`:
//!
//! ```text
//! L_div   = sum_g mean_i KL(p_g(o_i) || q_g(o_i))
//! L_prior = mean_i KL(e(o_i) || uniform_z)
//! L_tot   = L_prior + beta * L_div
//! ```

use ndarray::{Array2, ArrayView1, Axis};

use super::model::AbstractionModel;
use crate::env::{Action, Observation};
use crate::error::{Error, Result};
use crate::nn::Gradients;
use crate::obs_space::ObservationSpace;
use crate::policies::{ExpertKind, Policy};
use crate::scalar::Scalar;

/// Lower clamp applied to the second argument of the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// `sum_a p(a) ln(p(a) / q(a))`; terms with `p(a) = 0` vanish.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::contract(format!(
            "KL support mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(kl_row(p.iter().copied(), q.iter().copied()))
}

fn kl_row<T: Scalar>(p: impl Iterator<Item = T>, q: impl Iterator<Item = T>) -> f64 {
    p.zip(q)
        .filter(|(pa, _)| *pa > T::zero())
        .map(|(pa, qa)| {
            let pa = pa.to_f64_lossy();
            pa * (pa.ln() - qa.to_f64_lossy().max(LOG_FLOOR).ln())
        })
        .sum()
}

fn kl_uniform_row<T: Scalar>(e: ArrayView1<T>) -> f64 {
    let z = e.len() as f64;
    e.iter()
        .map(|v| v.to_f64_lossy())
        .filter(|&v| v > 0.0)
        .map(|v| v * v.ln())
        .sum::<f64>()
        + z.ln()
}

/// Encoded observations with the expert distributions to imitate.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub inputs: Array2<T>,
    /// One `n x 6` matrix per expert.
    pub targets: Vec<Array2<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn from_observations(
        space: &ObservationSpace,
        observations: &[Observation],
        experts: &[ExpertKind],
    ) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::contract("empty observation batch"));
        }
        let n = observations.len();
        let mut inputs = Array2::zeros((n, space.onehot_dim()));
        for (i, o) in observations.iter().enumerate() {
            space.index_of(o)?;
            for p in space.onehot_positions(o) {
                inputs[[i, p]] = T::one();
            }
        }
        let targets = experts
            .iter()
            .map(|e| {
                let mut t = Array2::zeros((n, Action::COUNT));
                for (i, o) in observations.iter().enumerate() {
                    for (a, &p) in e.act(o).probs().iter().enumerate() {
                        t[[i, a]] = T::of(p);
                    }
                }
                t
            })
            .collect();
        Ok(Dataset { inputs, targets })
    }

    /// Every observation of `space`, in canonical order.
    pub fn full(space: &ObservationSpace, experts: &[ExpertKind]) -> Result<Self> {
        Self::from_observations(space, &space.enumerate(), experts)
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub divergence: f64,
    pub prior: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.divergence.is_finite() && self.prior.is_finite()
    }
}

#[derive(Debug, Clone)]
pub struct ModelGradients<T> {
    pub encoder: Gradients<T>,
    pub decoders: Vec<Gradients<T>>,
}

fn check_targets<T: Scalar>(model: &AbstractionModel<T>, data: &Dataset<T>) -> Result<()> {
    if data.is_empty() {
        return Err(Error::contract("empty observation batch"));
    }
    if data.targets.len() != model.decoders.len() {
        return Err(Error::contract(format!(
            "{} expert targets for {} decoders",
            data.targets.len(),
            model.decoders.len()
        )));
    }
    Ok(())
}

fn mean_kl<T: Scalar>(p: &Array2<T>, q: &Array2<T>) -> f64 {
    let n = p.nrows() as f64;
    p.outer_iter()
        .zip(q.outer_iter())
        .map(|(pr, qr)| kl_row(pr.iter().copied(), qr.iter().copied()))
        .sum::<f64>()
        / n
}

/// Losses with the decoders fed the encoder's soft output (training view).
pub fn soft_losses<T: Scalar>(
    model: &AbstractionModel<T>,
    data: &Dataset<T>,
    beta: f64,
) -> Result<LossBreakdown> {
    check_targets(model, data)?;
    let enc = model.encoder.predict(data.inputs.view())?;
    let mut divergence = 0.0;
    for (dec, target) in model.decoders.iter().zip(&data.targets) {
        divergence += mean_kl(target, &dec.predict(enc.view())?);
    }
    let prior = enc.outer_iter().map(kl_uniform_row).sum::<f64>() / data.len() as f64;
    Ok(LossBreakdown {
        total: prior + beta * divergence,
        divergence,
        prior,
    })
}

pub fn divergence_loss<T: Scalar>(model: &AbstractionModel<T>, data: &Dataset<T>) -> Result<f64> {
    Ok(soft_losses(model, data, 0.0)?.divergence)
}

pub fn prior_loss<T: Scalar>(model: &AbstractionModel<T>, data: &Dataset<T>) -> Result<f64> {
    Ok(soft_losses(model, data, 0.0)?.prior)
}

pub fn total_loss<T: Scalar>(model: &AbstractionModel<T>, data: &Dataset<T>, beta: f64) -> Result<f64> {
    if beta < 0.0 {
        return Err(Error::contract("beta must be non-negative"));
    }
    Ok(soft_losses(model, data, beta)?.total)
}

/// Losses and exact gradients of `L_tot` w.r.t. every encoder and decoder
/// parameter.
pub fn loss_and_gradients<T: Scalar>(
    model: &AbstractionModel<T>,
    data: &Dataset<T>,
    beta: f64,
) -> Result<(LossBreakdown, ModelGradients<T>)> {
    check_targets(model, data)?;
    let n = data.len();
    let inv_n = T::of(1.0 / n as f64);
    let scale = T::of(beta / n as f64);
    let enc_cache = model.encoder.forward(data.inputs.view())?;
    let enc = enc_cache.output();

    let mut divergence = 0.0;
    let mut grad_enc = Array2::<T>::zeros(enc.raw_dim());
    let mut decoder_grads = Vec::with_capacity(model.decoders.len());
    for (dec, target) in model.decoders.iter().zip(&data.targets) {
        let cache = dec.forward(enc.view())?;
        let q = cache.output();
        divergence += mean_kl(target, q);
        // d KL(p || softmax(z)) / dz = q - p for normalised p.
        let dz = (q - target) * scale;
        let back = dec.backward_preact(&cache, dz)?;
        grad_enc += &back.input_grad;
        decoder_grads.push(back.grads);
    }

    let prior = enc.outer_iter().map(kl_uniform_row).sum::<f64>() / n as f64;
    let floor = T::of(LOG_FLOOR);
    grad_enc.zip_mut_with(enc, |g, &e| {
        *g = *g + inv_n * (e.max(floor).ln() + T::one());
    });
    let encoder = model.encoder.backward(&enc_cache, grad_enc.view())?.grads;

    let losses = LossBreakdown {
        total: prior + beta * divergence,
        divergence,
        prior,
    };
    Ok((
        losses,
        ModelGradients {
            encoder,
            decoders: decoder_grads,
        },
    ))
}

/// Losses and imitation accuracy with the decoders fed one-hot labels, as
/// used once training is over.
#[derive(Debug, Clone, PartialEq)]
pub struct HardEvaluation {
    pub divergence: f64,
    /// Per expert: fraction of observations where the decoder's most likely
    /// action equals the expert's.
    pub agreement: Vec<f64>,
    pub labels: Vec<usize>,
    pub distinct_labels: usize,
}

pub fn hard_evaluation<T: Scalar>(
    model: &AbstractionModel<T>,
    data: &Dataset<T>,
) -> Result<HardEvaluation> {
    check_targets(model, data)?;
    let labels = model.labels_for(data.inputs.view())?;
    let z = model.z_size();
    let mut onehot = Array2::<T>::zeros((labels.len(), z));
    for (i, &k) in labels.iter().enumerate() {
        onehot[[i, k]] = T::one();
    }
    let mut divergence = 0.0;
    let mut agreement = Vec::with_capacity(model.decoders.len());
    for (dec, target) in model.decoders.iter().zip(&data.targets) {
        let q = dec.predict(onehot.view())?;
        divergence += mean_kl(target, &q);
        let hits = q
            .outer_iter()
            .zip(target.outer_iter())
            .filter(|(qr, pr)| argmax_row(*qr) == argmax_row(*pr))
            .count();
        agreement.push(hits as f64 / labels.len() as f64);
    }
    let mut seen = vec![false; z];
    labels.iter().for_each(|&k| seen[k] = true);
    Ok(HardEvaluation {
        divergence,
        agreement,
        distinct_labels: seen.iter().filter(|&&s| s).count(),
        labels,
    })
}

pub(crate) fn argmax_row<T: Scalar>(row: ArrayView1<T>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Sum of the encoder output over the batch, normalised; handy diagnostics.
pub fn mean_label_distribution<T: Scalar>(model: &AbstractionModel<T>, data: &Dataset<T>) -> Result<Vec<f64>> {
    let enc = model.encoder.predict(data.inputs.view())?;
    let mean = enc.mean_axis(Axis(0)).unwrap();
    Ok(mean.iter().map(|v| v.to_f64_lossy()).collect())
}
