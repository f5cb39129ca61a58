//! Observation abstraction.
//!
//! An encoder classifies every raw observation into one of `z` abstract
//! labels; one decoder head per expert protocol maps the label distribution
//! back to an action distribution. Both are trained jointly so that the
//! decoders reproduce the experts (divergence loss) while the encoder stays
//! close to a uniform prior (prior loss). Once trained, only the encoder is
//! kept: its argmax is the abstraction function handed to the policy learner.

mod loss;
mod model;
mod train;

pub use loss::{
    divergence_loss, hard_evaluation, kl_divergence, loss_and_gradients, mean_label_distribution,
    prior_loss, soft_losses, total_loss, Dataset, HardEvaluation, LossBreakdown, ModelGradients,
    LOG_FLOOR,
};
pub use model::{AbstractionConfig, AbstractionModel, PhiMap};
pub use train::{
    plateau_z, relative_window_change, train_abstraction, train_abstraction_dyn, z_size_search,
    AbstractionRun, TrainedAbstraction, ZSearchEntry, ZSearchReport, EVAL_POINTS, PLATEAU_TOLERANCE,
};
