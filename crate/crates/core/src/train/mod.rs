//! Loss, Adam, the mini-batch training loop, and checkpoint persistence.

mod adam;
mod checkpoint;
mod training;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use training::{evaluate_loss, train, write_loss_log, EpochLog, TrainConfig, TrainOutcome};

pub use crate::fcgru::{loss, loss_and_grad, ModelParams};
