use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use super::config::MarlConfig;
use super::rollout::{RolloutBatch, PROB_FLOOR};
use crate::error::{Error, Result};
use crate::nn::{Adam, Mlp};

/// Clipped-surrogate actor loss and its gradient w.r.t. the actor's logits.
#[derive(Debug, Clone)]
pub struct ActorObjective {
    /// `-mean(min(r A, clip(r) A)) - entropy_coef * mean(H)`.
    pub loss: f64,
    /// `mean(min(r A, clip(r) A))`.
    pub surrogate: f64,
    pub entropy: f64,
    /// Fraction of samples whose clipped term is the active one.
    pub clip_fraction: f64,
    /// `mean(log π_old - log π_new)`.
    pub approx_kl: f64,
    pub grad_logits: Array2<f64>,
}

pub fn actor_objective(
    probs: ArrayView2<f64>,
    actions: &[usize],
    old_log_probs: &[f64],
    advantages: &[f64],
    clip: f64,
    entropy_coef: f64,
) -> ActorObjective {
    let n = probs.nrows();
    let inv_n = 1.0 / n.max(1) as f64;
    let mut grad = Array2::zeros(probs.raw_dim());
    let (mut surrogate, mut entropy, mut clipped, mut kl) = (0.0, 0.0, 0usize, 0.0);
    for i in 0..n {
        let p = probs.row(i);
        let a = actions[i];
        let adv = advantages[i];
        let logp = p[a].max(PROB_FLOOR).ln();
        let ratio = (logp - old_log_probs[i]).exp();
        let unclipped = ratio * adv;
        let clipped_term = ratio.clamp(1.0 - clip, 1.0 + clip) * adv;
        let h: f64 = -p.iter().map(|&q| q * q.max(PROB_FLOOR).ln()).sum::<f64>();
        surrogate += unclipped.min(clipped_term);
        entropy += h;
        kl += old_log_probs[i] - logp;
        let mut g = grad.row_mut(i);
        if unclipped <= clipped_term {
            // d(r A)/dz_j = r A (1[j = a] - p_j)
            for j in 0..p.len() {
                let delta = if j == a { 1.0 } else { 0.0 };
                g[j] -= ratio * adv * (delta - p[j]) * inv_n;
            }
        } else {
            clipped += 1;
        }
        // dH/dz_j = -p_j (ln p_j + H)
        for j in 0..p.len() {
            g[j] += entropy_coef * p[j] * (p[j].max(PROB_FLOOR).ln() + h) * inv_n;
        }
    }
    surrogate *= inv_n;
    entropy *= inv_n;
    ActorObjective {
        loss: -surrogate - entropy_coef * entropy,
        surrogate,
        entropy,
        clip_fraction: clipped as f64 * inv_n,
        approx_kl: kl * inv_n,
        grad_logits: grad,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PpoStats {
    pub actor_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// `epochs_per_update` full-batch steps on the actor and the evaluator. Every
/// agent's transitions feed the one shared parameter set.
pub fn ppo_update(
    actor: &mut Mlp<f64>,
    evaluator: &mut Mlp<f64>,
    actor_opt: &mut Adam<f64>,
    evaluator_opt: &mut Adam<f64>,
    batch: &RolloutBatch,
    config: &MarlConfig,
) -> Result<Vec<PpoStats>> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::contract("empty rollout batch"));
    }
    if batch.returns.len() != n || batch.advantages.len() != n {
        return Err(Error::contract("returns and advantages have not been computed"));
    }
    let x = batch.inputs_view();
    let mut stats = Vec::with_capacity(config.epochs_per_update);
    for epoch in 0..config.epochs_per_update {
        let cache = actor.forward(x)?;
        let obj = actor_objective(
            cache.output().view(),
            &batch.actions,
            &batch.log_probs,
            &batch.advantages,
            config.clip,
            config.entropy_coef,
        );
        let actor_back = actor.backward_preact(&cache, obj.grad_logits)?;

        let vcache = evaluator.forward(x)?;
        let v = vcache.output().column(0).to_owned();
        let mut value_loss = 0.0;
        let mut vgrad = Array2::zeros((n, 1));
        for i in 0..n {
            let err = v[i] - batch.returns[i];
            value_loss += err * err;
            vgrad[[i, 0]] = config.value_coef * 2.0 * err / n as f64;
        }
        value_loss *= config.value_coef / n as f64;
        let evaluator_back = evaluator.backward(&vcache, vgrad.view())?;

        if !obj.loss.is_finite()
            || !value_loss.is_finite()
            || !actor_back.grads.all_finite()
            || !evaluator_back.grads.all_finite()
        {
            return Err(Error::training(format!(
                "PPO epoch {epoch}: actor loss {} value loss {value_loss} entropy {} kl {} on {n} samples",
                obj.loss, obj.entropy, obj.approx_kl
            )));
        }
        actor_opt.step(actor, &actor_back.grads)?;
        evaluator_opt.step(evaluator, &evaluator_back.grads)?;
        stats.push(PpoStats {
            actor_loss: obj.loss,
            value_loss,
            entropy: obj.entropy,
            clip_fraction: obj.clip_fraction,
            approx_kl: obj.approx_kl,
        });
    }
    Ok(stats)
}
