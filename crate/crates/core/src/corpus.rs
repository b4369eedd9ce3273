//! On-disk corpus of precomputed contextual embeddings.
//!
//! A corpus directory holds `manifest.json` plus, per document, a binary
//! `<doc_id>.emb` file and a `<doc_id>.tokens.json` sidecar. The binary
//! layout is little-endian throughout:
//!
//! ```text
//! "CEMB" | version u32 = 1 | N u32 | D u32 | N·D f32 (H, row-major) | D f32 (e_d)
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::stopwords;

pub const DOCUMENT_MAGIC: &[u8; 4] = b"CEMB";
pub const DOCUMENT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("missing file {path}")]
    MissingFile { path: PathBuf },
    #[error("document {doc_id}: embedding dimension {found} does not match manifest dimension {expected}")]
    DimensionMismatch { doc_id: String, expected: usize, found: usize },
    #[error("document {doc_id}: corrupt header: {reason}")]
    CorruptHeader { doc_id: String, reason: String },
    #[error("document {doc_id}: non-finite value in {}", match .row { Some(r) => format!("H row {r}"), None => "e_d".to_string() })]
    NonFiniteValue { doc_id: String, row: Option<usize> },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("document {doc_id}: invalid token table: {reason}")]
    InvalidTokens { doc_id: String, reason: String },
    #[error("invalid document record {doc_id}: {reason}")]
    InvalidRecord { doc_id: String, reason: String },
    #[error("no word survives the vocabulary filters")]
    EmptyVocabulary,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl CorpusError {
    fn io(path: &Path, source: io::Error) -> Self {
        if source.kind() == io::ErrorKind::NotFound {
            CorpusError::MissingFile { path: path.to_path_buf() }
        } else {
            CorpusError::Io { path: path.to_path_buf(), source }
        }
    }
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Text,
    Patch,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenEntry {
    pub surface: String,
    pub kind: TokenKind,
}

impl TokenEntry {
    pub fn text(surface: impl Into<String>) -> Self {
        Self { surface: surface.into(), kind: TokenKind::Text }
    }

    pub fn patch(index: usize) -> Self {
        Self { surface: format!("patch:{index}"), kind: TokenKind::Patch }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.surface.is_empty() {
            return Err("empty surface".into());
        }
        if self.kind == TokenKind::Patch {
            let ok = self
                .surface
                .strip_prefix("patch:")
                .is_some_and(|idx| !idx.is_empty() && idx.bytes().all(|b| b.is_ascii_digit()));
            if !ok {
                return Err(format!("patch surface {:?} is not of the form patch:<index>", self.surface));
            }
        }
        Ok(())
    }
}

/// One document: its tokens, token embeddings `H` (N×D) and reference
/// document embedding `e_d` (D).
#[derive(Clone, Debug, PartialEq)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub tokens: Vec<TokenEntry>,
    pub embeddings: Matrix<f32>,
    pub doc_embedding: Vec<f32>,
}

impl DocumentRecord {
    pub fn new(
        doc_id: impl Into<String>,
        tokens: Vec<TokenEntry>,
        embeddings: Matrix<f32>,
        doc_embedding: Vec<f32>,
    ) -> Result<Self> {
        let record = Self { doc_id: doc_id.into(), tokens, embeddings, doc_embedding };
        record.validate()?;
        Ok(record)
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn dim(&self) -> usize {
        self.doc_embedding.len()
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| CorpusError::InvalidRecord { doc_id: self.doc_id.clone(), reason };
        if self.doc_id.is_empty() {
            return Err(invalid("empty doc_id".into()));
        }
        if self.tokens.is_empty() {
            return Err(invalid("document has no tokens".into()));
        }
        if self.tokens.len() != self.embeddings.rows() {
            return Err(invalid(format!("{} tokens but {} embedding rows", self.tokens.len(), self.embeddings.rows())));
        }
        if self.doc_embedding.is_empty() {
            return Err(invalid("embedding dimension is zero".into()));
        }
        if self.embeddings.cols() != self.doc_embedding.len() {
            return Err(invalid(format!(
                "H has {} columns but e_d has {} entries",
                self.embeddings.cols(),
                self.doc_embedding.len()
            )));
        }
        for (i, tok) in self.tokens.iter().enumerate() {
            tok.validate().map_err(|r| invalid(format!("token {i}: {r}")))?;
        }
        self.check_finite()
    }

    fn check_finite(&self) -> Result<()> {
        for (row, values) in self.embeddings.row_iter().enumerate() {
            if values.iter().any(|x| !x.is_finite()) {
                return Err(CorpusError::NonFiniteValue { doc_id: self.doc_id.clone(), row: Some(row) });
            }
        }
        if self.doc_embedding.iter().any(|x| !x.is_finite()) {
            return Err(CorpusError::NonFiniteValue { doc_id: self.doc_id.clone(), row: None });
        }
        Ok(())
    }
}

/// Serializes `record` in the binary document layout.
pub fn encode_document(record: &DocumentRecord) -> Vec<u8> {
    let n = record.num_tokens();
    let d = record.dim();
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * (n * d + d));
    buf.extend_from_slice(DOCUMENT_MAGIC);
    buf.extend_from_slice(&DOCUMENT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    for x in record.embeddings.as_slice().iter().chain(&record.doc_embedding) {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf
}

/// Parses the binary document layout. Finiteness is checked by the caller.
pub fn decode_document(doc_id: &str, bytes: &[u8]) -> Result<(Matrix<f32>, Vec<f32>)> {
    let corrupt = |reason: String| CorpusError::CorruptHeader { doc_id: doc_id.to_string(), reason };
    if bytes.len() < HEADER_LEN {
        return Err(corrupt(format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[0..4] != DOCUMENT_MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let version = word(4);
    if version != DOCUMENT_VERSION as usize {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let n = word(8);
    let d = word(12);
    if n == 0 || d == 0 {
        return Err(corrupt(format!("N={n}, D={d}; both must be positive")));
    }
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_add(d))
        .and_then(|c| c.checked_mul(4))
        .and_then(|c| c.checked_add(HEADER_LEN))
        .ok_or_else(|| corrupt("size overflow".into()))?;
    if bytes.len() != expected {
        return Err(corrupt(format!("expected {expected} bytes for N={n}, D={d}, found {}", bytes.len())));
    }
    let floats: Vec<f32> =
        bytes[HEADER_LEN..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let (h, e) = floats.split_at(n * d);
    Ok((Matrix::from_vec(n, d, h.to_vec()).unwrap(), e.to_vec()))
}

pub fn tokens_sidecar_path(emb_path: &Path, doc_id: &str) -> PathBuf {
    emb_path.parent().unwrap_or_else(|| Path::new("")).join(format!("{doc_id}.tokens.json"))
}

/// Writes `<path>` (binary) and the adjacent `<doc_id>.tokens.json` sidecar.
pub fn write_document(record: &DocumentRecord, path: &Path) -> Result<()> {
    record.validate()?;
    let bytes = encode_document(record);
    fs::File::create(path).and_then(|mut f| f.write_all(&bytes)).map_err(|e| CorpusError::io(path, e))?;
    let sidecar = tokens_sidecar_path(path, &record.doc_id);
    let json = serde_json::to_vec_pretty(&record.tokens).expect("token table serializes");
    fs::write(&sidecar, json).map_err(|e| CorpusError::io(&sidecar, e))
}

/// Reads and fully validates one document.
pub fn read_document(doc_id: &str, path: &Path, expected_dim: Option<usize>) -> Result<DocumentRecord> {
    let bytes = fs::read(path).map_err(|e| CorpusError::io(path, e))?;
    let (embeddings, doc_embedding) = decode_document(doc_id, &bytes)?;
    if let Some(expected) = expected_dim {
        if embeddings.cols() != expected {
            return Err(CorpusError::DimensionMismatch {
                doc_id: doc_id.to_string(),
                expected,
                found: embeddings.cols(),
            });
        }
    }
    let sidecar = tokens_sidecar_path(path, doc_id);
    let raw = fs::read(&sidecar).map_err(|e| CorpusError::io(&sidecar, e))?;
    let tokens: Vec<TokenEntry> = serde_json::from_slice(&raw)
        .map_err(|e| CorpusError::InvalidTokens { doc_id: doc_id.to_string(), reason: e.to_string() })?;
    if tokens.len() != embeddings.rows() {
        return Err(CorpusError::InvalidTokens {
            doc_id: doc_id.to_string(),
            reason: format!("{} tokens for N={}", tokens.len(), embeddings.rows()),
        });
    }
    let record = DocumentRecord { doc_id: doc_id.to_string(), tokens, embeddings, doc_embedding };
    record.validate()?;
    Ok(record)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentEntry {
    pub doc_id: String,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub corpus_id: String,
    pub embedding_dim: usize,
    pub num_documents: usize,
    #[serde(default)]
    pub encoder_name: String,
    pub documents: Vec<DocumentEntry>,
}

impl CorpusManifest {
    fn validate_fields(&self) -> Result<()> {
        let bad = |m: String| Err(CorpusError::InvalidManifest(m));
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be at least 1".into());
        }
        if self.num_documents != self.documents.len() {
            return bad(format!(
                "num_documents is {} but {} entries are listed",
                self.num_documents,
                self.documents.len()
            ));
        }
        let mut seen = HashSet::new();
        for entry in &self.documents {
            if entry.doc_id.is_empty() {
                return bad("empty doc_id".into());
            }
            if !seen.insert(entry.doc_id.as_str()) {
                return bad(format!("duplicate doc_id {}", entry.doc_id));
            }
        }
        let labeled = self.documents.iter().filter(|e| e.label.is_some()).count();
        if labeled != 0 && labeled != self.documents.len() {
            return bad(format!("mixed labeling: {labeled} of {} documents carry a label", self.documents.len()));
        }
        Ok(())
    }

    pub fn has_labels(&self) -> bool {
        !self.documents.is_empty() && self.documents.iter().all(|e| e.label.is_some())
    }

    /// doc_id → label, when the corpus is labeled.
    pub fn labels(&self) -> Option<BTreeMap<String, String>> {
        self.has_labels().then(|| self.documents.iter().map(|e| (e.doc_id.clone(), e.label.clone().unwrap())).collect())
    }
}

/// A loaded manifest plus a lazy, validating document accessor.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    root: PathBuf,
}

impl Corpus {
    /// Accepts either the manifest file or the directory containing it.
    pub fn open(path: &Path) -> Result<Self> {
        let manifest_path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let raw = fs::read(&manifest_path).map_err(|e| CorpusError::io(&manifest_path, e))?;
        let manifest: CorpusManifest =
            serde_json::from_slice(&raw).map_err(|e| CorpusError::InvalidManifest(e.to_string()))?;
        manifest.validate_fields()?;
        let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        for entry in &manifest.documents {
            let p = root.join(&entry.path);
            if !p.is_file() {
                return Err(CorpusError::MissingFile { path: p });
            }
        }
        Ok(Self { manifest, root })
    }

    pub fn len(&self) -> usize {
        self.manifest.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.documents.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.manifest.embedding_dim
    }

    pub fn document(&self, index: usize) -> Result<DocumentRecord> {
        let entry = &self.manifest.documents[index];
        read_document(&entry.doc_id, &self.root.join(&entry.path), Some(self.manifest.embedding_dim))
    }

    pub fn documents(&self) -> impl Iterator<Item = Result<DocumentRecord>> + '_ {
        (0..self.len()).map(|i| self.document(i))
    }

    pub fn load_all(&self) -> Result<Vec<DocumentRecord>> {
        self.documents().collect()
    }
}

/// Loads a corpus from a manifest path or corpus directory.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    Corpus::open(path)
}

/// Writes a complete corpus directory (documents, sidecars, manifest).
pub fn write_corpus(
    dir: &Path,
    corpus_id: &str,
    encoder_name: &str,
    docs: &[DocumentRecord],
    labels: Option<&[String]>,
) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
    let dim = docs.first().map_or(1, DocumentRecord::dim);
    if let Some(labels) = labels {
        if labels.len() != docs.len() {
            return Err(CorpusError::InvalidManifest(format!("{} labels for {} documents", labels.len(), docs.len())));
        }
    }
    let mut entries = Vec::with_capacity(docs.len());
    for (i, doc) in docs.iter().enumerate() {
        if doc.dim() != dim {
            return Err(CorpusError::DimensionMismatch { doc_id: doc.doc_id.clone(), expected: dim, found: doc.dim() });
        }
        let file = format!("{}.emb", doc.doc_id);
        write_document(doc, &dir.join(&file))?;
        entries.push(DocumentEntry { doc_id: doc.doc_id.clone(), path: file, label: labels.map(|l| l[i].clone()) });
    }
    let manifest = CorpusManifest {
        corpus_id: corpus_id.to_string(),
        embedding_dim: dim,
        num_documents: entries.len(),
        encoder_name: encoder_name.to_string(),
        documents: entries,
    };
    manifest.validate_fields()?;
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| CorpusError::io(&path, e))?;
    Ok(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocabularyConfig {
    pub max_size: usize,
    pub min_doc_freq: usize,
    /// Replaces the bundled English list when set.
    pub stopwords: Option<Vec<String>>,
}

impl Default for VocabularyConfig {
    fn default() -> Self {
        Self { max_size: 5000, min_doc_freq: 5, stopwords: None }
    }
}

impl VocabularyConfig {
    pub fn stopword_set(&self) -> HashSet<String> {
        match &self.stopwords {
            Some(list) => list.iter().cloned().collect(),
            None => default_stopwords(),
        }
    }
}

pub fn default_stopwords() -> HashSet<String> {
    stopwords::ENGLISH.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyFile", into = "VocabularyFile")]
pub struct Vocabulary {
    words: Vec<String>,
    doc_frequency: Vec<usize>,
    index: HashMap<String, usize>,
}

#[derive(Clone, Serialize, Deserialize)]
struct VocabularyFile {
    words: Vec<String>,
    doc_frequency: Vec<usize>,
}

impl TryFrom<VocabularyFile> for Vocabulary {
    type Error = String;

    fn try_from(f: VocabularyFile) -> std::result::Result<Self, String> {
        if f.words.len() != f.doc_frequency.len() {
            return Err("words and doc_frequency differ in length".into());
        }
        Ok(Vocabulary::from_words(f.words, f.doc_frequency))
    }
}

impl From<Vocabulary> for VocabularyFile {
    fn from(v: Vocabulary) -> Self {
        VocabularyFile { words: v.words, doc_frequency: v.doc_frequency }
    }
}

impl Vocabulary {
    pub fn from_words(words: Vec<String>, doc_frequency: Vec<usize>) -> Self {
        assert_eq!(words.len(), doc_frequency.len());
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, doc_frequency, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn doc_frequency(&self, index: usize) -> usize {
        self.doc_frequency[index]
    }
}

/// Builds the vocabulary from document frequencies of Text-kind surfaces.
///
/// Keeps the `max_size` most document-frequent non-stopword surfaces with
/// frequency ≥ `min_doc_freq`; ties are broken lexicographically.
pub fn build_vocabulary<'a, I>(
    docs: I,
    stopwords: &HashSet<String>,
    min_doc_freq: usize,
    max_size: usize,
) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a DocumentRecord>,
{
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in docs {
        let unique: BTreeSet<&str> = doc
            .tokens
            .iter()
            .filter(|t| t.kind == TokenKind::Text)
            .map(|t| t.surface.as_str())
            .filter(|s| !stopwords.contains(*s))
            .collect();
        for w in unique {
            *df.entry(w).or_insert(0) += 1;
        }
    }
    let mut candidates: Vec<(&str, usize)> = df.into_iter().filter(|&(_, c)| c >= min_doc_freq.max(1)).collect();
    candidates.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    candidates.truncate(max_size);
    if candidates.is_empty() {
        return Err(CorpusError::EmptyVocabulary);
    }
    let (words, freqs) = candidates.into_iter().map(|(w, c)| (w.to_string(), c)).unzip();
    Ok(Vocabulary::from_words(words, freqs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, words: &[&str]) -> DocumentRecord {
        let tokens: Vec<TokenEntry> = words.iter().map(|w| TokenEntry::text(*w)).collect();
        let n = tokens.len();
        DocumentRecord::new(id, tokens, Matrix::zeros(n, 2), vec![0.0, 0.0]).unwrap()
    }

    #[test]
    fn single_cell_layout_is_24_bytes() {
        let rec = DocumentRecord::new(
            "a",
            vec![TokenEntry::text("lava")],
            Matrix::from_vec(1, 1, vec![2.5]).unwrap(),
            vec![1.0],
        )
        .unwrap();
        let bytes = encode_document(&rec);
        assert_eq!(bytes.len(), 24);
        assert_eq!(&bytes[..4], b"CEMB");
        assert_eq!(&bytes[16..20], &2.5f32.to_le_bytes());
        assert_eq!(&bytes[20..24], &1.0f32.to_le_bytes());
    }

    #[test]
    fn record_with_token_row_mismatch_is_rejected_before_writing() {
        let rec = DocumentRecord {
            doc_id: "bad".into(),
            tokens: vec![TokenEntry::text("a"), TokenEntry::text("b")],
            embeddings: Matrix::zeros(1, 2),
            doc_embedding: vec![0.0; 2],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.emb");
        assert!(matches!(write_document(&rec, &path), Err(CorpusError::InvalidRecord { .. })));
        assert!(!path.exists());
    }

    #[test]
    fn patch_surface_must_carry_index() {
        let t = TokenEntry { surface: "patch:x".into(), kind: TokenKind::Patch };
        assert!(t.validate().is_err());
        assert!(TokenEntry::patch(3).validate().is_ok());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let err = decode_document("d", b"CEMB\x01\x00\x00\x00").unwrap_err();
        assert!(matches!(err, CorpusError::CorruptHeader { .. }));
        let mut bytes = encode_document(&doc("d", &["x"]));
        bytes[0] = b'X';
        assert!(matches!(decode_document("d", &bytes), Err(CorpusError::CorruptHeader { .. })));
    }

    #[test]
    fn vocabulary_counts_documents_not_occurrences() {
        let docs = vec![doc("1", &["lava", "lava", "ash"]), doc("2", &["lava"]), doc("3", &["lava", "the"])];
        let v = build_vocabulary(&docs, &HashSet::new(), 2, 10).unwrap();
        assert_eq!(v.words(), &["lava".to_string()]);
        assert_eq!(v.doc_frequency(0), 3);
    }

    #[test]
    fn vocabulary_drops_stopwords_and_patches() {
        let mut d = doc("1", &["the", "lava"]);
        d.tokens.push(TokenEntry::patch(0));
        d.embeddings = Matrix::zeros(3, 2);
        let v = build_vocabulary([&d], &default_stopwords(), 1, 10).unwrap();
        assert_eq!(v.words(), &["lava".to_string()]);
    }

    #[test]
    fn empty_vocabulary_is_an_error() {
        let docs = vec![doc("1", &["a"])];
        assert!(matches!(build_vocabulary(&docs, &HashSet::new(), 2, 10), Err(CorpusError::EmptyVocabulary)));
    }

    #[test]
    fn mixed_labels_are_rejected() {
        let m = CorpusManifest {
            corpus_id: "c".into(),
            embedding_dim: 2,
            num_documents: 2,
            encoder_name: String::new(),
            documents: vec![
                DocumentEntry { doc_id: "a".into(), path: "a.emb".into(), label: Some("x".into()) },
                DocumentEntry { doc_id: "b".into(), path: "b.emb".into(), label: None },
            ],
        };
        assert!(matches!(m.validate_fields(), Err(CorpusError::InvalidManifest(_))));
    }
}
