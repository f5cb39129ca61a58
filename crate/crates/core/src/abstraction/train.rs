use log::{debug, info};
use rayon::prelude::*;
use serde::Serialize;

use super::loss::{hard_evaluation, loss_and_gradients, soft_losses, Dataset, HardEvaluation, LossBreakdown};
use super::model::{AbstractionConfig, AbstractionModel, PhiMap};
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::scalar::{Precision, Scalar};

/// Outcome of one abstraction training run.
#[derive(Debug, Clone)]
pub struct TrainedAbstraction<T> {
    pub model: AbstractionModel<T>,
    /// Losses before each gradient step.
    pub history: Vec<LossBreakdown>,
    /// `(step, L_div)` with one-hot labels, sampled during training and once
    /// more after the last step.
    pub eval_history: Vec<(usize, f64)>,
    /// Soft losses after the last step.
    pub final_losses: LossBreakdown,
    pub evaluation: HardEvaluation,
}

impl<T: Scalar> TrainedAbstraction<T> {
    pub fn phi_map(&self) -> Result<PhiMap> {
        PhiMap::new(self.model.space, self.model.z_size(), self.evaluation.labels.clone())
    }

    /// Relative change of the evaluation `L_div` across the final `fraction`
    /// of the run.
    pub fn final_window_change(&self, fraction: f64) -> f64 {
        let div: Vec<f64> = self.eval_history.iter().map(|&(_, l)| l).collect();
        relative_window_change(&div, fraction)
    }

    /// Same, for the soft training `L_div`.
    pub fn soft_window_change(&self, fraction: f64) -> f64 {
        let div: Vec<f64> = self
            .history
            .iter()
            .map(|l| l.divergence)
            .chain(std::iter::once(self.final_losses.divergence))
            .collect();
        relative_window_change(&div, fraction)
    }
}

/// `|x[end] - x[start]| / |x[start]|` where `start` opens the final
/// `fraction` of the series.
pub fn relative_window_change(series: &[f64], fraction: f64) -> f64 {
    if series.len() < 2 {
        return 0.0;
    }
    let window = ((series.len() as f64 * fraction).ceil() as usize).clamp(1, series.len() - 1);
    let start = series[series.len() - 1 - window];
    let end = series[series.len() - 1];
    (end - start).abs() / start.abs().max(f64::MIN_POSITIVE)
}

/// Full-batch Adam on `L_prior + beta * L_div` over every observation of the
/// configured space.
pub fn train_abstraction<T: Scalar>(config: &AbstractionConfig, seed: u64) -> Result<TrainedAbstraction<T>> {
    config.validate()?;
    let space = config.space()?;
    let data = Dataset::<T>::full(&space, &config.experts)?;
    let mut model = AbstractionModel::<T>::init(config, seed)?;
    let mut enc_opt = Adam::new(&model.encoder, config.lr_abs);
    let mut dec_opts: Vec<_> = model
        .decoders
        .iter()
        .map(|d| Adam::new(d, config.lr_abs))
        .collect();
    let mut history = Vec::with_capacity(config.n_abs);
    let mut eval_history = Vec::new();
    let report_every = (config.n_abs / 10).max(1);
    let eval_every = (config.n_abs / EVAL_POINTS).max(1);
    for episode in 0..config.n_abs {
        if episode % eval_every == 0 {
            eval_history.push((episode, hard_evaluation(&model, &data)?.divergence));
        }
        let (losses, grads) = loss_and_gradients(&model, &data, config.beta)?;
        if !losses.is_finite() || !grads.encoder.all_finite() {
            return Err(Error::training(format!(
                "abstraction episode {episode}: L_tot={} L_div={} L_prior={} (z={}, beta={}, lr={})",
                losses.total, losses.divergence, losses.prior, config.z_size, config.beta, config.lr_abs
            )));
        }
        if episode % report_every == 0 {
            info!(
                "abstraction z={} episode {episode}/{}: L_tot={:.6} L_div={:.6} L_prior={:.6}",
                config.z_size, config.n_abs, losses.total, losses.divergence, losses.prior
            );
        }
        history.push(losses);
        enc_opt.step(&mut model.encoder, &grads.encoder)?;
        for ((dec, opt), g) in model.decoders.iter_mut().zip(&mut dec_opts).zip(&grads.decoders) {
            opt.step(dec, g)?;
        }
    }
    let final_losses = soft_losses(&model, &data, config.beta)?;
    if !final_losses.is_finite() {
        return Err(Error::training(format!(
            "abstraction finished with non-finite loss: {final_losses:?}"
        )));
    }
    let evaluation = hard_evaluation(&model, &data)?;
    eval_history.push((config.n_abs, evaluation.divergence));
    debug!(
        "abstraction z={} done: eval L_div={:.6} labels={} agreement={:?}",
        config.z_size, evaluation.divergence, evaluation.distinct_labels, evaluation.agreement
    );
    Ok(TrainedAbstraction {
        model,
        history,
        eval_history,
        final_losses,
        evaluation,
    })
}

/// Number of evaluation-loss samples taken over a training run.
pub const EVAL_POINTS: usize = 500;

/// Precision-erased training result, converted to `f64` for storage.
#[derive(Debug, Clone)]
pub struct AbstractionRun {
    pub precision: Precision,
    pub model: AbstractionModel<f64>,
    pub history: Vec<LossBreakdown>,
    pub eval_history: Vec<(usize, f64)>,
    pub final_losses: LossBreakdown,
    pub evaluation: HardEvaluation,
    /// Relative change of the evaluation `L_div` over the final 10% of steps.
    pub final_window_change: f64,
    /// Same for the soft training `L_div`.
    pub soft_window_change: f64,
}

impl AbstractionRun {
    pub fn phi_map(&self) -> Result<PhiMap> {
        PhiMap::new(self.model.space, self.model.z_size(), self.evaluation.labels.clone())
    }
}

fn erase<T: Scalar>(run: TrainedAbstraction<T>, precision: Precision) -> AbstractionRun {
    let final_window_change = run.final_window_change(0.1);
    let soft_window_change = run.soft_window_change(0.1);
    AbstractionRun {
        precision,
        model: run.model.cast(),
        history: run.history,
        eval_history: run.eval_history,
        soft_window_change,
        final_losses: run.final_losses,
        evaluation: run.evaluation,
        final_window_change,
    }
}

/// Trains in the precision named by the configuration.
pub fn train_abstraction_dyn(config: &AbstractionConfig, seed: u64) -> Result<AbstractionRun> {
    match config.precision {
        Precision::F32 => Ok(erase(train_abstraction::<f32>(config, seed)?, Precision::F32)),
        Precision::F64 => Ok(erase(train_abstraction::<f64>(config, seed)?, Precision::F64)),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ZSearchEntry {
    pub z: usize,
    /// `L_div` with one-hot labels fed to the decoders.
    pub eval_divergence: f64,
    /// Soft `L_div` at the end of training.
    pub train_divergence: f64,
    pub distinct_labels: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ZSearchReport {
    pub entries: Vec<ZSearchEntry>,
    /// Smallest `z` whose evaluation loss sits on the plateau.
    pub plateau_z: usize,
    pub tolerance: f64,
}

/// Default plateau tolerance: fraction of the total improvement over the sweep.
pub const PLATEAU_TOLERANCE: f64 = 0.05;

/// Smallest entry whose evaluation loss is within `tolerance` of the best,
/// measured relative to the improvement between the first entry and the best.
pub fn plateau_z(entries: &[ZSearchEntry], tolerance: f64) -> Option<usize> {
    let first = entries.first()?.eval_divergence;
    let best = entries
        .iter()
        .map(|e| e.eval_divergence)
        .fold(f64::INFINITY, f64::min);
    let slack = tolerance * (first - best).max(0.0);
    entries
        .iter()
        .find(|e| e.eval_divergence <= best + slack)
        .map(|e| e.z)
}

/// Trains one model per label count (in parallel) and locates the plateau.
pub fn z_size_search(base: &AbstractionConfig, z_range: &[usize], seed: u64) -> Result<ZSearchReport> {
    if z_range.is_empty() || z_range.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("z range must be non-empty and strictly ascending"));
    }
    let entries = z_range
        .par_iter()
        .map(|&z| {
            let cfg = AbstractionConfig {
                z_size: z,
                ..base.clone()
            };
            let run = train_abstraction_dyn(&cfg, seed)?;
            Ok(ZSearchEntry {
                z,
                eval_divergence: run.evaluation.divergence,
                train_divergence: run.final_losses.divergence,
                distinct_labels: run.evaluation.distinct_labels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let plateau_z = plateau_z(&entries, PLATEAU_TOLERANCE).unwrap();
    Ok(ZSearchReport {
        entries,
        plateau_z,
        tolerance: PLATEAU_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(z: usize) -> AbstractionConfig {
        AbstractionConfig {
            z_size: z,
            q: 2,
            n_abs: 300,
            lr_abs: 5e-3,
            encoder_hidden: vec![32, 32],
            decoder_hidden: vec![16],
            precision: Precision::F64,
            ..AbstractionConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic() {
        let a = train_abstraction::<f64>(&quick(4), 9).unwrap();
        let b = train_abstraction::<f64>(&quick(4), 9).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn training_reduces_total_loss() {
        let run = train_abstraction::<f32>(&quick(8), 1).unwrap();
        assert!(run.final_losses.total < run.history[0].total);
        assert!(run.evaluation.distinct_labels <= 8);
    }

    #[test]
    fn evaluation_loss_is_tracked() {
        let run = train_abstraction::<f64>(&quick(4), 3).unwrap();
        let steps: Vec<usize> = run.eval_history.iter().map(|e| e.0).collect();
        assert_eq!(steps.first(), Some(&0));
        assert_eq!(steps.last(), Some(&300));
        assert!(steps.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(run.eval_history.last().unwrap().1, run.evaluation.divergence);
    }

    #[test]
    fn single_label_is_worse_than_eight() {
        let one = train_abstraction::<f64>(&quick(1), 2).unwrap();
        let eight = train_abstraction::<f64>(&quick(8), 2).unwrap();
        assert_eq!(one.evaluation.distinct_labels, 1);
        assert!(one.evaluation.divergence > eight.evaluation.divergence);
        assert!(one.final_losses.divergence > eight.final_losses.divergence);
    }

    #[test]
    fn diverging_training_is_reported() {
        let cfg = AbstractionConfig {
            lr_abs: f64::INFINITY,
            n_abs: 3,
            ..quick(2)
        };
        assert!(matches!(train_abstraction::<f64>(&cfg, 0), Err(Error::Training(_))));
    }

    #[test]
    fn plateau_rule() {
        let e = |z, l| ZSearchEntry {
            z,
            eval_divergence: l,
            train_divergence: l,
            distinct_labels: z,
        };
        let entries = vec![e(1, 2.0), e(2, 1.0), e(3, 0.09), e(4, 0.02), e(5, 0.0)];
        assert_eq!(plateau_z(&entries, 0.05), Some(3));
        assert_eq!(plateau_z(&entries, 0.0), Some(5));
        assert_eq!(plateau_z(&[], 0.05), None);
    }

    #[test]
    fn window_change() {
        let s: Vec<f64> = (0..=100).map(|i| 10.0 - i as f64 * 0.01).collect();
        let c = relative_window_change(&s, 0.1);
        // window of 11 steps: 9.11 -> 9.00
        assert!((c - 0.11 / 9.11).abs() < 1e-12);
        assert_eq!(relative_window_change(&[1.0], 0.1), 0.0);
    }
}
