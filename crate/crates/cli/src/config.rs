//! Run configuration: built-in defaults, overridden by the `--config` JSON
//! file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use cemtm::corpus::VocabularyConfig;
use cemtm::eval::{JudgeConfig, MetricConfig};
use cemtm::train::TrainConfig;
use cemtm::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Architecture settings apart from `D` (taken from the corpus) and `K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub encoder_hidden: usize,
    pub imp_model_dim: usize,
    pub imp_layers: usize,
    pub imp_heads: usize,
    pub imp_ffn_dim: usize,
    pub lambda_ent: f64,
    pub lambda_kl: f64,
    pub entropy_sign_follows_prose: bool,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let m = ModelConfig::new(1, 1);
        Self {
            encoder_hidden: m.encoder_hidden,
            imp_model_dim: m.imp_model_dim,
            imp_layers: m.imp_layers,
            imp_heads: m.imp_heads,
            imp_ffn_dim: m.imp_ffn_dim,
            lambda_ent: m.lambda_ent,
            lambda_kl: m.lambda_kl,
            entropy_sign_follows_prose: m.entropy_sign_follows_prose,
        }
    }
}

impl ModelSettings {
    pub fn model_config(&self, embedding_dim: usize, num_topics: usize) -> ModelConfig {
        ModelConfig {
            embedding_dim,
            num_topics,
            encoder_hidden: self.encoder_hidden,
            imp_model_dim: self.imp_model_dim,
            imp_layers: self.imp_layers,
            imp_heads: self.imp_heads,
            imp_ffn_dim: self.imp_ffn_dim,
            lambda_ent: self.lambda_ent,
            lambda_kl: self.lambda_kl,
            entropy_sign_follows_prose: self.entropy_sign_follows_prose,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub topics: Option<usize>,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub vocabulary: VocabularyConfig,
    pub metrics: MetricConfig,
    pub judge: JudgeConfig,
    /// word2vec text file for WE coherence.
    pub word_vectors: Option<PathBuf>,
}

impl RunConfig {
    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.corpus, &mut cfg.out, &mut cfg.word_vectors].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn from_flag(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn corpus(&self) -> Result<&Path, CliError> {
        self.corpus.as_deref().ok_or_else(|| missing("corpus", "--corpus"))
    }

    pub fn out(&self) -> Result<&Path, CliError> {
        self.out.as_deref().ok_or_else(|| missing("out", "--out"))
    }

    pub fn topics(&self) -> Result<usize, CliError> {
        self.topics.ok_or_else(|| missing("topics", "--topics"))
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }
}

fn missing(field: &str, flag: &str) -> CliError {
    CliError::Usage(format!("missing required field `{field}` (pass {flag} or set \"{field}\" in --config)"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(
            &path,
            r#"{"corpus": "c", "topics": 3, "train": {"epochs": 2}, "model": {"encoder_hidden": 8}}"#,
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.corpus.unwrap(), dir.path().join("c"));
        assert_eq!(cfg.topics, Some(3));
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.train.batch_size, 8);
        assert_eq!(cfg.model.encoder_hidden, 8);
        assert_eq!(cfg.model.imp_ffn_dim, 512);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"corpsu": "c"}"#).unwrap();
        assert!(matches!(RunConfig::load(&path), Err(CliError::Usage(_))));
    }

    #[test]
    fn missing_corpus_names_the_field() {
        let err = RunConfig::default().corpus().unwrap_err();
        assert!(err.to_string().contains("`corpus`"));
    }

    #[test]
    fn run_seed_drives_training() {
        let cfg = RunConfig { seed: 42, ..RunConfig::default() };
        assert_eq!(cfg.train_config().seed, 42);
    }
}
