//! Few-shot example selection by document-topic similarity.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::cosine;
use crate::topics::DocumentAssignment;

pub const DEFAULT_K: usize = 3;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("θ length {found} does not match index K = {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no candidates remain after exclusion")]
    EmptyIndex,
    #[error("document {0:?} is not in the index")]
    UnknownDocument(String),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("invalid theta index: {0}")]
    Invalid(String),
    #[error("theta index I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    #[default]
    Cosine,
    /// `1 − JS(a‖b)` with natural logarithms, normalized by ln 2 into [0, 1].
    JensenShannon,
}

impl Similarity {
    pub fn score(self, a: &[f64], b: &[f64]) -> Result<f64, RetrievalError> {
        if a.len() != b.len() {
            return Err(RetrievalError::DimensionMismatch { expected: a.len(), found: b.len() });
        }
        Ok(match self {
            Similarity::Cosine => cosine(a, b),
            Similarity::JensenShannon => 1.0 - jensen_shannon(a, b) / std::f64::consts::LN_2,
        })
    }
}

fn kl_to_mixture(p: &[f64], m: &[f64]) -> f64 {
    p.iter().zip(m).filter(|(&pi, _)| pi > 0.0).map(|(&pi, &mi)| pi * (pi / mi).ln()).sum()
}

/// Jensen–Shannon divergence of two distributions (each normalized first).
pub fn jensen_shannon(a: &[f64], b: &[f64]) -> f64 {
    let normalize = |v: &[f64]| {
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect::<Vec<_>>()
    };
    let (a, b) = (normalize(a), normalize(b));
    let m: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
    (0.5 * kl_to_mixture(&a, &m) + 0.5 * kl_to_mixture(&b, &m)).max(0.0)
}

pub fn topic_similarity(a: &[f64], b: &[f64]) -> Result<f64, RetrievalError> {
    Similarity::Cosine.score(a, b)
}

/// Immutable doc_id → θ map; serialized as a plain JSON object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, Vec<f64>>", into = "BTreeMap<String, Vec<f64>>")]
pub struct ThetaIndex {
    entries: BTreeMap<String, Vec<f64>>,
    num_topics: usize,
}

impl TryFrom<BTreeMap<String, Vec<f64>>> for ThetaIndex {
    type Error = RetrievalError;

    fn try_from(entries: BTreeMap<String, Vec<f64>>) -> Result<Self, Self::Error> {
        let num_topics = entries.values().next().map_or(0, Vec::len);
        for (doc_id, theta) in &entries {
            if theta.len() != num_topics {
                return Err(RetrievalError::DimensionMismatch { expected: num_topics, found: theta.len() });
            }
            if theta.iter().any(|x| !x.is_finite()) {
                return Err(RetrievalError::Invalid(format!("non-finite θ for {doc_id}")));
            }
        }
        Ok(Self { entries, num_topics })
    }
}

impl From<ThetaIndex> for BTreeMap<String, Vec<f64>> {
    fn from(index: ThetaIndex) -> Self {
        index.entries
    }
}

impl ThetaIndex {
    pub fn new<I: IntoIterator<Item = (String, Vec<f64>)>>(entries: I) -> Result<Self, RetrievalError> {
        let mut map = BTreeMap::new();
        for (doc_id, theta) in entries {
            if map.insert(doc_id.clone(), theta).is_some() {
                return Err(RetrievalError::Invalid(format!("duplicate doc_id {doc_id:?}")));
            }
        }
        Self::try_from(map)
    }

    pub fn from_assignments(assignments: &[DocumentAssignment]) -> Result<Self, RetrievalError> {
        Self::new(assignments.iter().map(|a| (a.doc_id.clone(), a.theta.iter().map(|&x| f64::from(x)).collect())))
    }

    pub fn num_topics(&self) -> usize {
        self.num_topics
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&[f64]> {
        self.entries.get(doc_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("θ index serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| RetrievalError::Invalid(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrievedExample {
    pub doc_id: String,
    pub similarity: f64,
}

/// Top-`k` candidates by descending similarity, ties by ascending doc_id,
/// never returning an id from `exclude`.
pub fn select_examples(
    query: &[f64],
    index: &ThetaIndex,
    k: usize,
    exclude: &BTreeSet<String>,
    similarity: Similarity,
) -> Result<Vec<RetrievedExample>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if !index.is_empty() && query.len() != index.num_topics {
        return Err(RetrievalError::DimensionMismatch { expected: index.num_topics, found: query.len() });
    }
    let mut scored = index
        .iter()
        .filter(|(doc_id, _)| !exclude.contains(*doc_id))
        .map(|(doc_id, theta)| {
            Ok(RetrievedExample { doc_id: doc_id.to_string(), similarity: similarity.score(query, theta)? })
        })
        .collect::<Result<Vec<_>, RetrievalError>>()?;
    if scored.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    scored.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then_with(|| a.doc_id.cmp(&b.doc_id)));
    scored.truncate(k);
    Ok(scored)
}

/// Examples for an indexed document; the query itself is always excluded.
pub fn select_for_document(
    doc_id: &str,
    index: &ThetaIndex,
    k: usize,
    similarity: Similarity,
) -> Result<Vec<RetrievedExample>, RetrievalError> {
    let query = index.get(doc_id).ok_or_else(|| RetrievalError::UnknownDocument(doc_id.to_string()))?;
    let exclude = BTreeSet::from([doc_id.to_string()]);
    select_examples(query, index, k, &exclude, similarity)
}
