//! Clustered synthetic corpora: token embeddings scattered around a few
//! well-separated Gaussian centers, one center per document.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{DocumentRecord, Result, TokenEntry};
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub num_topics: usize,
    pub dim: usize,
    pub num_documents: usize,
    pub tokens_per_document: usize,
    /// Patch tokens appended to each document, drawn around the same center.
    pub patches_per_document: usize,
    pub words_per_topic: usize,
    pub center_scale: f64,
    pub word_scale: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_topics: 5,
            dim: 32,
            num_documents: 200,
            tokens_per_document: 20,
            patches_per_document: 0,
            words_per_topic: 8,
            center_scale: 1.0,
            word_scale: 0.25,
            noise_scale: 0.1,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub documents: Vec<DocumentRecord>,
    /// Generating cluster of each document, as `"cluster<k>"`.
    pub labels: Vec<String>,
    pub clusters: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn word_surface(topic: usize, word: usize) -> String {
    format!("t{topic}w{word}")
}

/// Documents are assigned to clusters round-robin; each text token picks one
/// of its cluster's words, embedded at center + word offset + noise. `e_d`
/// is the mean token embedding.
pub fn generate(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (k, d) = (config.num_topics, config.dim);
    let centers: Vec<Vec<f64>> = (0..k).map(|_| gaussian(&mut rng, d, config.center_scale)).collect();
    let offsets: Vec<Vec<Vec<f64>>> = (0..k)
        .map(|_| (0..config.words_per_topic).map(|_| gaussian(&mut rng, d, config.word_scale)).collect())
        .collect();
    let mut documents = Vec::with_capacity(config.num_documents);
    let mut clusters = Vec::with_capacity(config.num_documents);
    for i in 0..config.num_documents {
        let c = i % k;
        let n = config.tokens_per_document + config.patches_per_document;
        let mut tokens = Vec::with_capacity(n);
        let mut rows = Vec::with_capacity(n * d);
        for t in 0..n {
            let base: Vec<f64> = if t < config.tokens_per_document {
                let w = rng.random_range(0..config.words_per_topic);
                tokens.push(TokenEntry::text(word_surface(c, w)));
                centers[c].iter().zip(&offsets[c][w]).map(|(a, b)| a + b).collect()
            } else {
                tokens.push(TokenEntry::patch(t - config.tokens_per_document));
                centers[c].clone()
            };
            let noise = gaussian(&mut rng, d, config.noise_scale);
            rows.extend(base.iter().zip(&noise).map(|(a, b)| (a + b) as f32));
        }
        let embeddings = Matrix::from_vec(n, d, rows).expect("row-major token block");
        let mut mean = vec![0.0f64; d];
        for row in embeddings.row_iter() {
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += f64::from(x);
            }
        }
        let doc_embedding = mean.iter().map(|m| (m / n as f64) as f32).collect();
        documents.push(DocumentRecord::new(format!("doc{i:04}"), tokens, embeddings, doc_embedding)?);
        clusters.push(c);
    }
    Ok(SyntheticCorpus {
        labels: clusters.iter().map(|c| format!("cluster{c}")).collect(),
        documents,
        clusters,
        centers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_labels() {
        let cfg = SyntheticConfig { num_documents: 10, patches_per_document: 2, ..Default::default() };
        let corpus = generate(&cfg).unwrap();
        assert_eq!(corpus.documents.len(), 10);
        let doc = &corpus.documents[3];
        assert_eq!(doc.num_tokens(), 22);
        assert_eq!(doc.dim(), 32);
        assert_eq!(corpus.labels[3], "cluster3");
        assert!(doc.tokens[..20].iter().all(|t| t.surface.starts_with("t3w")));
        assert_eq!(doc.tokens[21].surface, "patch:1");
    }

    #[test]
    fn same_seed_same_corpus() {
        let cfg = SyntheticConfig { num_documents: 4, ..Default::default() };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.documents[2].embeddings, b.documents[2].embeddings);
        let c = generate(&SyntheticConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.documents[2].embeddings, c.documents[2].embeddings);
    }
}
