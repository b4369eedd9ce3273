//! Context-enhanced multimodal topic modeling over precomputed contextual
//! token embeddings.
//!
//! Each document is a matrix of token (or image patch) embeddings plus a
//! reference document embedding. Tokens are mapped to soft topic
//! distributions, weighted by a stochastic importance network, pooled into
//! a document topic vector and decoded back to the document embedding.
//! Topic-word distributions are read off by importance-weighted
//! aggregation of token topic vectors.

// `!(x > 0.0)` deliberately rejects NaN; index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod corpus;
pub mod eval;
pub mod exec;
pub mod linalg;
pub mod model;
pub mod retrieval;
mod stopwords;
pub mod synthetic;
pub mod topics;
pub mod train;
pub mod verify;

pub use corpus::{Corpus, DocumentRecord, TokenEntry, TokenKind, Vocabulary};
pub use exec::Execution;
pub use model::{ModelConfig, ModelParams};
