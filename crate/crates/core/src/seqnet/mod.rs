//! LSTM sequence regression: `[IDIF, myocardium]` sequences to MCIF sequences.

pub mod adam;
pub mod checkpoint;
pub mod lstm;
pub mod train;

use thiserror::Error;

pub use adam::{adam_step, adam_update, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use lstm::{backward, count_params, forward, mse_loss, predict_sequence, ForwardCache, LstmWeights};
pub use train::{
    evaluate_mse, run_epochs, train, train_step, EarlyStopping, LstmModel, SequenceSet, TrainConfig,
    TrainHistory,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeqnetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("cache does not belong to the current weights")]
    StaleCache,
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
