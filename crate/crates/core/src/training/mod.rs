//! Losses, SGD, the two-stage joint/finetune schedule and checkpoints.

mod checkpoint;
mod loss;
mod train;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use loss::{combined_loss, parsing_loss, reconstruction_loss, LossOutput, LossWeights};
pub use train::{
    format_loss_log, sgd_step, train, train_from, train_from_manifests, LossRecord, TrainConfig, DEFAULT_LEARNING_RATE,
    LOSS_LOG_HEADER,
};
