//! Siamese recurrent encoder: cells, stacked bidirectional layers, embeddings,
//! the similarity head and the contrastive loss, with exact reverse-mode
//! gradients for training.

mod cell;
mod encoder;
pub mod linalg;
mod siamese;

use thiserror::Error;

pub use cell::{cell_step, cell_step_gru, Activation, CellKind, CellState, Gate, RecurrentCellParams};
pub use encoder::{bilayer_forward, BiLayerParams, Embedding, EncoderConfig, EncoderParams};
pub use linalg::Matrix;
pub use siamese::{
    accumulate_gradients, contrastive_loss, encode, model_gradients, pair_distance, pair_loss,
    similarity_score, HeadParams, PairGradient, SiameseModel,
};

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("shape mismatch: {0}")]
    Shape(String),
}
