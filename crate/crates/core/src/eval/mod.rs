//! Topic quality metrics: coherence (NPMI, WE), diversity (TD, I-RBO),
//! clustering agreement (purity, ARI, NMI) and an optional LLM judge.

pub mod clustering;
pub mod coherence;
pub mod diversity;
pub mod judge;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use clustering::{align_labels, ari, nmi, purity};
pub use coherence::{npmi, we_coherence, CooccurrenceStats, WordVectors};
pub use diversity::{irbo, rbo, topic_diversity};
pub use judge::{llm_score, parse_rating, HttpJudge, JudgeClient, JudgeConfig, LlmScore};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("co-occurrence statistics are empty")]
    EmptyStats,
    #[error("no topic has word vectors for at least two of its top words")]
    NoVectorsAvailable,
    #[error("topic {topic} has {found} words, {needed} required")]
    InsufficientWords { topic: usize, found: usize, needed: usize },
    #[error("rank-biased overlap needs at least two topics")]
    SingleTopic,
    #[error("predicted and gold labelings cover different documents: {0}")]
    LabelMismatch(String),
    #[error("invalid metric parameter: {0}")]
    InvalidParameter(String),
    #[error("word vector file line {line}: {reason}")]
    WordVectorFormat { line: usize, reason: String },
}

/// Metric-side settings echoed into every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub coherence_top_n: usize,
    pub diversity_top_n: usize,
    pub rbo_p: f64,
    pub rbo_depth: usize,
    pub npmi_epsilon: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { coherence_top_n: 10, diversity_top_n: 25, rbo_p: 0.9, rbo_depth: 10, npmi_epsilon: 1e-12 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub npmi: f64,
    pub we: Option<f64>,
    pub td: f64,
    pub irbo: f64,
    pub purity: Option<f64>,
    pub ari: Option<f64>,
    pub nmi: Option<f64>,
    pub llm: Option<f64>,
    pub config: MetricConfig,
}
