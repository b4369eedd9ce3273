//! Word-level coherence: NPMI over document co-occurrence and mean pairwise
//! cosine over an external word-vector table.

use std::collections::{BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use crate::linalg::cosine;

use super::MetricError;

/// Boolean document-level counts for a fixed set of words of interest.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CooccurrenceStats {
    counts: HashMap<String, usize>,
    joint: HashMap<(String, String), usize>,
    total: usize,
}

fn pair_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl CooccurrenceStats {
    /// Counts, for every document (given as its word surfaces), which of
    /// `words` it contains and which pairs of them it contains together.
    pub fn from_documents<'a, D, W>(documents: D, words: &BTreeSet<String>) -> Self
    where
        D: IntoIterator<Item = W>,
        W: IntoIterator<Item = &'a str>,
    {
        let mut stats = Self::default();
        for doc in documents {
            stats.total += 1;
            let present: BTreeSet<&str> = doc.into_iter().filter(|w| words.contains(*w)).collect();
            let present: Vec<&str> = present.into_iter().collect();
            for (i, w) in present.iter().enumerate() {
                *stats.counts.entry(w.to_string()).or_insert(0) += 1;
                for v in &present[i + 1..] {
                    *stats.joint.entry(pair_key(w, v)).or_insert(0) += 1;
                }
            }
        }
        stats
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn count(&self, word: &str) -> usize {
        self.counts.get(word).copied().unwrap_or(0)
    }

    pub fn joint(&self, a: &str, b: &str) -> usize {
        if a == b {
            return self.count(a);
        }
        self.joint.get(&pair_key(a, b)).copied().unwrap_or(0)
    }

    /// Pairwise NPMI; `None` when either word never occurs.
    pub fn pair_npmi(&self, a: &str, b: &str, epsilon: f64) -> Option<f64> {
        let n = self.total as f64;
        let (ca, cb) = (self.count(a), self.count(b));
        if self.total == 0 || ca == 0 || cb == 0 {
            return None;
        }
        let pw = ca as f64 / n;
        let pv = cb as f64 / n;
        let pwv = self.joint(a, b) as f64 / n + epsilon;
        let denom = -pwv.ln();
        if denom <= 0.0 {
            // p(w,v) = 1: both words are in every document
            return Some(1.0);
        }
        Some((pwv / (pw * pv)).ln() / denom)
    }
}

fn pairs<T>(items: &[T]) -> impl Iterator<Item = (&T, &T)> {
    items.iter().enumerate().flat_map(move |(i, a)| items[i + 1..].iter().map(move |b| (a, b)))
}

/// Mean over topics of the mean pairwise NPMI of each topic's word list.
/// Pairs involving a word absent from the statistics are skipped, as are
/// topics left without any scorable pair.
pub fn npmi<S: AsRef<str>>(topics: &[Vec<S>], stats: &CooccurrenceStats, epsilon: f64) -> Result<f64, MetricError> {
    if stats.total == 0 {
        return Err(MetricError::EmptyStats);
    }
    if !(epsilon > 0.0) {
        return Err(MetricError::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut per_topic = Vec::new();
    for words in topics {
        let scores: Vec<f64> =
            pairs(words).filter_map(|(a, b)| stats.pair_npmi(a.as_ref(), b.as_ref(), epsilon)).collect();
        if !scores.is_empty() {
            per_topic.push(scores.iter().sum::<f64>() / scores.len() as f64);
        }
    }
    if per_topic.is_empty() {
        return Err(MetricError::EmptyStats);
    }
    Ok(per_topic.iter().sum::<f64>() / per_topic.len() as f64)
}

/// A word → vector table read from the textual word2vec format.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WordVectors {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectors {
    pub fn new(dim: usize) -> Self {
        Self { dim, vectors: HashMap::new() }
    }

    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) -> Result<(), MetricError> {
        if vector.len() != self.dim {
            return Err(MetricError::InvalidParameter(format!(
                "vector of length {} in a {}-dimensional table",
                vector.len(),
                self.dim
            )));
        }
        self.vectors.insert(word.into(), vector);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Parses `count dim` followed by one `word f1 … f_dim` line per entry.
    pub fn read<R: BufRead>(reader: R) -> Result<Self, MetricError> {
        let format = |line: usize, reason: String| MetricError::WordVectorFormat { line, reason };
        let mut lines = reader.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| format(1, "missing header".into()))?;
        let header = header.map_err(|e| format(1, e.to_string()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let parsed: Vec<usize> = fields.iter().filter_map(|f| f.parse().ok()).collect();
        if fields.len() != 2 || parsed.len() != 2 {
            return Err(format(1, format!("expected `count dim`, got {header:?}")));
        }
        let (count, dim) = (parsed[0], parsed[1]);
        let mut table = Self::new(dim);
        for (i, line) in lines {
            let line = line.map_err(|e| format(i + 1, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let word = fields.next().unwrap_or_default();
            let vector = fields
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| format(i + 1, e.to_string()))?;
            if vector.len() != dim {
                return Err(format(i + 1, format!("expected {dim} values, got {}", vector.len())));
            }
            table.vectors.insert(word.to_string(), vector);
        }
        if table.len() != count {
            log::warn!("word vector header announces {count} entries, read {}", table.len());
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, MetricError> {
        let file = std::fs::File::open(path)
            .map_err(|e| MetricError::WordVectorFormat { line: 0, reason: format!("{}: {e}", path.display()) })?;
        Self::read(std::io::BufReader::new(file))
    }
}

/// Mean over topics of mean pairwise cosine among the topic words that have
/// vectors. Topics with fewer than two covered words contribute nothing.
pub fn we_coherence<S: AsRef<str>>(topics: &[Vec<S>], vectors: &WordVectors) -> Result<f64, MetricError> {
    let mut per_topic = Vec::new();
    for words in topics {
        let covered: Vec<&[f64]> = words.iter().filter_map(|w| vectors.get(w.as_ref())).collect();
        if covered.len() < 2 {
            continue;
        }
        let sims: Vec<f64> = pairs(&covered).map(|(a, b)| cosine(a, b)).collect();
        per_topic.push(sims.iter().sum::<f64>() / sims.len() as f64);
    }
    if per_topic.is_empty() {
        return Err(MetricError::NoVectorsAvailable);
    }
    Ok(per_topic.iter().sum::<f64>() / per_topic.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(ws: &[&str]) -> BTreeSet<String> {
        ws.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn perfect_association_tends_to_one() {
        let docs = vec![vec!["a", "b"], vec!["a", "b"], vec!["c"], vec!["c"]];
        let stats = CooccurrenceStats::from_documents(docs, &words(&["a", "b"]));
        let v = stats.pair_npmi("a", "b", 1e-12).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn independence_scores_zero() {
        let docs = vec![vec!["a", "b"], vec!["a"], vec!["b"], vec![]];
        let stats = CooccurrenceStats::from_documents(docs, &words(&["a", "b"]));
        let v = stats.pair_npmi("a", "b", 1e-12).unwrap();
        assert!(v.abs() < 1e-9, "{v}");
    }

    #[test]
    fn counts_are_boolean_per_document() {
        let docs = vec![vec!["a", "a", "b"], vec!["b", "b"]];
        let stats = CooccurrenceStats::from_documents(docs, &words(&["a", "b"]));
        assert_eq!(stats.count("a"), 1);
        assert_eq!(stats.count("b"), 2);
        assert_eq!(stats.joint("b", "a"), 1);
        assert_eq!(stats.total(), 2);
    }

    #[test]
    fn empty_stats_rejected() {
        let stats = CooccurrenceStats::default();
        assert_eq!(npmi(&[vec!["a", "b"]], &stats, 1e-12), Err(MetricError::EmptyStats));
    }

    #[test]
    fn word2vec_text_round_trip() {
        let text = "3 2\nx 1 0\ny 0 1\nz 1 1\n";
        let table = WordVectors::read(text.as_bytes()).unwrap();
        assert_eq!(table.len(), 3);
        assert_eq!(table.get("z"), Some(&[1.0, 1.0][..]));
        let bad = "1 2\nx 1\n";
        assert!(matches!(WordVectors::read(bad.as_bytes()), Err(MetricError::WordVectorFormat { line: 2, .. })));
    }

    #[test]
    fn we_identical_and_orthogonal() {
        let table = WordVectors::read("3 2\nx 1 0\ny 0 1\nw 1 0\n".as_bytes()).unwrap();
        assert!((we_coherence(&[vec!["x", "w"]], &table).unwrap() - 1.0).abs() < 1e-12);
        assert!(we_coherence(&[vec!["x", "y"]], &table).unwrap().abs() < 1e-12);
        // topic with one covered word is skipped
        assert!((we_coherence(&[vec!["x", "w"], vec!["y", "missing"]], &table).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(we_coherence(&[vec!["missing", "x"]], &table), Err(MetricError::NoVectorsAvailable));
    }
}
