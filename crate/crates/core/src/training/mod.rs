//! Losses, optimization and the epoch loop.

mod adam;
mod loss;
mod trainer;
mod weights;

pub use adam::OptimizerState;
pub use loss::{
    classification_loss, classification_loss_value, generative_loss, generative_loss_value, joint_loss,
    joint_loss_value, CLAMP,
};
pub use trainer::{
    dropout_mask, log_tsv, objective, samples, train, validate, EpochLog, LossTerms, TrainConfig, TrainOutcome,
    TrainSample, Validation, LOG_HEADER,
};
pub use weights::{compute_class_weights, ClassWeights};
