//! Forward computation of the topic model, its losses, and their gradients.

mod backward;
pub mod checkpoint;
mod config;
mod forward;
mod params;

use thiserror::Error;

pub use backward::{document_gradients, DocumentGradients};
pub use config::ModelConfig;
pub use forward::{
    decode, document_topic, encode_token_topics, forward_document, importance_forward, infer_theta, loss_ent, loss_kl,
    loss_rec, normalize_importance, sample_importance, total_loss, ForwardTrace, LossParts, Sampling,
};
pub use params::{ImportanceNet, LayerNorm, Linear, ModelParams, TensorView, TopicEncoder, TransformerBlock};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    ShapeMismatch { what: &'static str, expected: usize, found: usize },
    #[error("sigma at token {index} is not positive")]
    NonPositiveSigma { index: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), ModelError> {
    if expected == found {
        Ok(())
    } else {
        Err(ModelError::ShapeMismatch { what, expected, found })
    }
}
