use serde::{Deserialize, Serialize};

use super::ModelError;

/// Architecture and objective hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding dimension `D` of the contextual token vectors.
    pub embedding_dim: usize,
    /// Number of topics `K`.
    pub num_topics: usize,
    #[serde(default = "defaults::encoder_hidden")]
    pub encoder_hidden: usize,
    #[serde(default = "defaults::imp_model_dim")]
    pub imp_model_dim: usize,
    #[serde(default = "defaults::imp_layers")]
    pub imp_layers: usize,
    #[serde(default = "defaults::imp_heads")]
    pub imp_heads: usize,
    #[serde(default = "defaults::imp_ffn_dim")]
    pub imp_ffn_dim: usize,
    #[serde(default = "defaults::lambda_ent")]
    pub lambda_ent: f64,
    #[serde(default = "defaults::lambda_kl")]
    pub lambda_kl: f64,
    /// `true`: the entropy term is `H(β) = −Σ β log β`, so minimizing the
    /// loss sharpens β. `false`: the literal `Σ β log β`.
    #[serde(default = "defaults::entropy_sign")]
    pub entropy_sign_follows_prose: bool,
}

mod defaults {
    pub fn encoder_hidden() -> usize {
        512
    }
    pub fn imp_model_dim() -> usize {
        256
    }
    pub fn imp_layers() -> usize {
        2
    }
    pub fn imp_heads() -> usize {
        4
    }
    pub fn imp_ffn_dim() -> usize {
        512
    }
    pub fn lambda_ent() -> f64 {
        0.05
    }
    pub fn lambda_kl() -> f64 {
        0.1
    }
    pub fn entropy_sign() -> bool {
        true
    }
}

impl ModelConfig {
    pub fn new(embedding_dim: usize, num_topics: usize) -> Self {
        Self {
            embedding_dim,
            num_topics,
            encoder_hidden: defaults::encoder_hidden(),
            imp_model_dim: defaults::imp_model_dim(),
            imp_layers: defaults::imp_layers(),
            imp_heads: defaults::imp_heads(),
            imp_ffn_dim: defaults::imp_ffn_dim(),
            lambda_ent: defaults::lambda_ent(),
            lambda_kl: defaults::lambda_kl(),
            entropy_sign_follows_prose: defaults::entropy_sign(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.imp_model_dim / self.imp_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.embedding_dim == 0 {
            return fail("embedding_dim must be positive");
        }
        if self.num_topics < 2 {
            return fail("num_topics must be at least 2");
        }
        if self.encoder_hidden == 0 || self.imp_model_dim == 0 || self.imp_ffn_dim == 0 {
            return fail("hidden widths must be positive");
        }
        if self.imp_heads == 0 || !self.imp_model_dim.is_multiple_of(self.imp_heads) {
            return fail("imp_model_dim must be divisible by imp_heads");
        }
        if !(self.lambda_ent >= 0.0 && self.lambda_kl >= 0.0) {
            return fail("regularization weights must be non-negative");
        }
        Ok(())
    }
}
