//! Objective, gradients, optimizer, training loop and finite-difference checks.

mod gradcheck;
mod loss;
mod optim;
mod trainer;

pub use gradcheck::{gradcheck, gradcheck_forecaster, probe_batch, GradcheckReport};
pub use loss::{alignment_targets, backward, main_loss, total_loss, LossBreakdown};
pub use optim::{AdamW, AdamWConfig};
pub use trainer::{train, train_with, EpochRecord, Forecaster, TrainHyper, TrainReport};
pub(crate) use trainer::score;
