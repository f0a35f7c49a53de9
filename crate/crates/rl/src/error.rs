//! Error type of the training stack.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RlError {
    #[error(transparent)]
    Sim(#[from] aircombat_sim::SimError),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error("checkpoint io: {0}")]
    CheckpointIo(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
}
