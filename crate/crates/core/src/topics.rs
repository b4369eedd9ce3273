//! Topic-word distributions from importance-weighted token topic vectors.
//!
//! For a word `w` with occurrence set `I_w`, `t_w = Σ_{i∈I_w} β_i t_i / Z_w`
//! with `Z_w = Σ_{i∈I_w} β_i`. Image patches count as occurrences of the
//! in-vocabulary text token of the same document they are most similar to.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{DocumentRecord, TokenKind, Vocabulary};
use crate::exec::Execution;
use crate::linalg::cosine;
use crate::model::{infer_theta, ModelError, ModelParams, Sampling};

#[derive(Debug, Error, PartialEq)]
pub enum TopicError {
    #[error("no vocabulary word received any importance mass")]
    EmptyExtraction,
    #[error("topic {topic} out of range for {num_topics} topics")]
    TopicOutOfRange { topic: usize, num_topics: usize },
    #[error("document {doc_id}: {source}")]
    Model {
        doc_id: String,
        #[source]
        source: ModelError,
    },
}

/// Vocabulary index substituted for a patch token.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchSubstitute {
    pub token: usize,
    pub word: Option<usize>,
}

/// Maps each patch to the in-vocabulary text token of the same document
/// with maximal cosine similarity (ties go to the earliest token).
pub fn map_patches_to_words(record: &DocumentRecord, vocabulary: &Vocabulary) -> Vec<PatchSubstitute> {
    let text: Vec<(usize, usize)> = record
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.kind == TokenKind::Text)
        .filter_map(|(i, t)| vocabulary.index_of(&t.surface).map(|w| (i, w)))
        .collect();
    record
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.kind == TokenKind::Patch)
        .map(|(p, _)| {
            let patch = record.embeddings.row(p);
            let mut best: Option<(f32, usize)> = None;
            for &(i, w) in &text {
                let sim = cosine(patch, record.embeddings.row(i));
                if best.is_none_or(|(b, _)| sim > b) {
                    best = Some((sim, w));
                }
            }
            PatchSubstitute { token: p, word: best.map(|(_, w)| w) }
        })
        .collect()
}

/// Vocabulary index for every token position, after patch substitution.
fn token_words(record: &DocumentRecord, vocabulary: &Vocabulary) -> Vec<Option<usize>> {
    let mut words: Vec<Option<usize>> = record
        .tokens
        .iter()
        .map(|t| match t.kind {
            TokenKind::Text => vocabulary.index_of(&t.surface),
            TokenKind::Patch => None,
        })
        .collect();
    for sub in map_patches_to_words(record, vocabulary) {
        words[sub.token] = sub.word;
    }
    words
}

/// Per-word topic scores for every word that received importance mass.
#[derive(Clone, Debug, PartialEq)]
pub struct TopicWordMatrix {
    pub words: Vec<String>,
    /// Row `r` is `t_w` for `words[r]`, length `K`.
    pub scores: Vec<Vec<f64>>,
    /// `Z_w` per retained word.
    pub occurrence_mass: Vec<f64>,
    pub num_topics: usize,
}

impl TopicWordMatrix {
    /// Builds the matrix from per-word accumulated `Σ β t` and `Σ β`,
    /// dropping words with zero mass.
    pub fn from_accumulators(
        vocabulary: &Vocabulary,
        weighted: Vec<Vec<f64>>,
        mass: Vec<f64>,
        num_topics: usize,
    ) -> Result<Self, TopicError> {
        let mut out =
            TopicWordMatrix { words: Vec::new(), scores: Vec::new(), occurrence_mass: Vec::new(), num_topics };
        for (w, (row, z)) in weighted.into_iter().zip(mass).enumerate() {
            if z > 0.0 {
                out.words.push(vocabulary.word(w).to_string());
                out.scores.push(row.into_iter().map(|x| x / z).collect());
                out.occurrence_mass.push(z);
            }
        }
        if out.words.is_empty() {
            return Err(TopicError::EmptyExtraction);
        }
        Ok(out)
    }
}

/// One token occurrence of vocabulary word `word` with importance `beta`
/// and topic vector `topics`.
#[derive(Clone, Debug, PartialEq)]
pub struct Occurrence {
    pub word: usize,
    pub beta: f64,
    pub topics: Vec<f64>,
}

/// `t_w = Σ β_i t_i / Σ β_i` over the given occurrences, in iteration order.
pub fn aggregate_occurrences<'a, I>(
    vocabulary: &Vocabulary,
    num_topics: usize,
    occurrences: I,
) -> Result<TopicWordMatrix, TopicError>
where
    I: IntoIterator<Item = &'a Occurrence>,
{
    let mut weighted = vec![vec![0.0; num_topics]; vocabulary.len()];
    let mut mass = vec![0.0; vocabulary.len()];
    for occ in occurrences {
        mass[occ.word] += occ.beta;
        for (acc, &x) in weighted[occ.word].iter_mut().zip(&occ.topics) {
            *acc += occ.beta * x;
        }
    }
    TopicWordMatrix::from_accumulators(vocabulary, weighted, mass, num_topics)
}

struct DocContribution {
    doc_id: String,
    entries: Vec<Occurrence>,
}

/// Aggregates deterministic (`α = μ`) token topic vectors into `t_w`.
///
/// Per-document contributions are computed independently and merged in
/// `doc_id` order, so the result does not depend on corpus order or thread count.
pub fn aggregate_word_topics(
    docs: &[DocumentRecord],
    params: &ModelParams<f32>,
    vocabulary: &Vocabulary,
    execution: Execution,
) -> Result<TopicWordMatrix, TopicError> {
    let k = params.config.num_topics;
    let mut contributions = execution
        .map(docs, |doc| -> Result<DocContribution, TopicError> {
            let trace = infer_theta(doc, params, Sampling::Deterministic)
                .map_err(|source| TopicError::Model { doc_id: doc.doc_id.clone(), source })?;
            let entries = token_words(doc, vocabulary)
                .into_iter()
                .enumerate()
                .filter_map(|(i, w)| {
                    w.map(|word| Occurrence {
                        word,
                        beta: trace.beta[i] as f64,
                        topics: trace.t.row(i).iter().map(|&x| x as f64).collect(),
                    })
                })
                .collect();
            Ok(DocContribution { doc_id: doc.doc_id.clone(), entries })
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    contributions.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    aggregate_occurrences(vocabulary, k, contributions.iter().flat_map(|c| &c.entries))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredWord {
    pub word: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicSummary {
    pub id: usize,
    pub words: Vec<ScoredWord>,
}

impl TopicSummary {
    pub fn word_list(&self) -> Vec<&str> {
        self.words.iter().map(|w| w.word.as_str()).collect()
    }
}

/// Highest-scoring `n` words of topic `topic`; ties broken lexicographically.
pub fn top_words(matrix: &TopicWordMatrix, topic: usize, n: usize) -> Result<TopicSummary, TopicError> {
    if topic >= matrix.num_topics {
        return Err(TopicError::TopicOutOfRange { topic, num_topics: matrix.num_topics });
    }
    let mut order: Vec<usize> = (0..matrix.words.len()).collect();
    order.sort_by(|&a, &b| {
        matrix.scores[b][topic]
            .partial_cmp(&matrix.scores[a][topic])
            .unwrap_or(Ordering::Equal)
            .then_with(|| matrix.words[a].cmp(&matrix.words[b]))
    });
    order.truncate(n);
    Ok(TopicSummary {
        id: topic,
        words: order
            .into_iter()
            .map(|i| ScoredWord { word: matrix.words[i].clone(), score: matrix.scores[i][topic] })
            .collect(),
    })
}

pub fn all_top_words(matrix: &TopicWordMatrix, n: usize) -> Vec<TopicSummary> {
    (0..matrix.num_topics).map(|k| top_words(matrix, k, n).expect("topic index in range")).collect()
}

/// On-disk topic summary file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicsFile {
    pub topics: Vec<TopicSummary>,
    pub config_hash: String,
}

/// Hex SHA-256 of any serializable configuration.
pub fn config_hash<S: Serialize>(config: &S) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocumentAssignment {
    pub doc_id: String,
    pub theta: Vec<f32>,
    pub topic: usize,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Deterministic document topic vectors and their argmax topics.
pub fn assign_documents(
    docs: &[DocumentRecord],
    params: &ModelParams<f32>,
    execution: Execution,
) -> Result<Vec<DocumentAssignment>, TopicError> {
    execution
        .map(docs, |doc| {
            let trace = infer_theta(doc, params, Sampling::Deterministic)
                .map_err(|source| TopicError::Model { doc_id: doc.doc_id.clone(), source })?;
            Ok(DocumentAssignment { doc_id: doc.doc_id.clone(), topic: argmax(&trace.theta), theta: trace.theta })
        })
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TokenEntry;
    use crate::linalg::Matrix;

    fn vocab(words: &[&str]) -> Vocabulary {
        Vocabulary::from_words(words.iter().map(|w| w.to_string()).collect(), vec![1; words.len()])
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.1, 0.9]), 1);
        assert_eq!(argmax(&[0.25; 4]), 0);
    }

    #[test]
    fn patch_equal_to_text_token_takes_its_word() {
        let rec = DocumentRecord::new(
            "d",
            vec![TokenEntry::text("lava"), TokenEntry::text("ash"), TokenEntry::patch(0)],
            Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 2.0]]).unwrap(),
            vec![0.0, 0.0],
        )
        .unwrap();
        let v = vocab(&["ash", "lava"]);
        let subs = map_patches_to_words(&rec, &v);
        assert_eq!(subs, vec![PatchSubstitute { token: 2, word: Some(0) }]);
    }

    #[test]
    fn patches_without_vocabulary_text_get_nothing() {
        let rec = DocumentRecord::new(
            "d",
            vec![TokenEntry::text("zzz"), TokenEntry::patch(0), TokenEntry::patch(1)],
            Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            vec![0.0, 0.0],
        )
        .unwrap();
        let subs = map_patches_to_words(&rec, &vocab(&["lava"]));
        assert!(subs.iter().all(|s| s.word.is_none()));
        assert_eq!(subs.len(), 2);
    }

    #[test]
    fn top_words_checks_topic_range_and_truncation() {
        let m = TopicWordMatrix {
            words: vec!["a".into(), "b".into()],
            scores: vec![vec![0.9, 0.1], vec![0.1, 0.9]],
            occurrence_mass: vec![1.0, 1.0],
            num_topics: 2,
        };
        assert_eq!(top_words(&m, 0, 1).unwrap().word_list(), vec!["a"]);
        assert_eq!(top_words(&m, 1, 10).unwrap().words.len(), 2);
        assert_eq!(top_words(&m, 2, 1), Err(TopicError::TopicOutOfRange { topic: 2, num_topics: 2 }));
    }

    #[test]
    fn zero_mass_words_are_dropped() {
        let v = vocab(&["a", "b"]);
        let m =
            TopicWordMatrix::from_accumulators(&v, vec![vec![0.2, 0.8], vec![0.0, 0.0]], vec![1.0, 0.0], 2).unwrap();
        assert_eq!(m.words, vec!["a".to_string()]);
        assert_eq!(
            TopicWordMatrix::from_accumulators(&v, vec![vec![0.0; 2]; 2], vec![0.0; 2], 2),
            Err(TopicError::EmptyExtraction)
        );
    }

    #[test]
    fn config_hash_is_stable_hex() {
        let h = config_hash(&("x", 3));
        assert_eq!(h.len(), 64);
        assert_eq!(h, config_hash(&("x", 3)));
    }
}
