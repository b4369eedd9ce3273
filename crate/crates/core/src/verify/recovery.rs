//! End-to-end recovery of planted clusters from a synthetic corpus.

use std::fmt;
use std::time::Instant;

use serde::Serialize;

use crate::eval::purity;
use crate::exec::Execution;
use crate::model::{forward_document, loss_ent, ModelConfig, Sampling};
use crate::synthetic::{generate, SyntheticConfig};
use crate::topics::assign_documents;
use crate::train::{train, TrainConfig};

use super::oracles;

#[derive(Clone, Debug)]
pub struct RecoveryConfig {
    pub synthetic: SyntheticConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub purity_threshold: f64,
    pub kmeans_threshold: f64,
    pub kmeans_restarts: usize,
}

/// Width settings small enough for laptop-scale runs.
pub fn toy_model(dim: usize, topics: usize) -> ModelConfig {
    ModelConfig {
        encoder_hidden: 16,
        imp_model_dim: 16,
        imp_layers: 2,
        imp_heads: 4,
        imp_ffn_dim: 32,
        ..ModelConfig::new(dim, topics)
    }
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        let synthetic = SyntheticConfig::default();
        Self {
            model: toy_model(synthetic.dim, synthetic.num_topics),
            synthetic,
            train: TrainConfig {
                learning_rate: 1e-3,
                epochs: 200,
                normalize_targets: true,
                restarts: 6,
                screen_epochs: 64,
                ..TrainConfig::default()
            },
            purity_threshold: 0.9,
            kmeans_threshold: 0.95,
            kmeans_restarts: 10,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RecoveryOutcome {
    pub purity: f64,
    pub kmeans_purity: f64,
    pub first_epoch_loss: f64,
    pub final_epoch_loss: f64,
    pub selected_seed: u64,
    pub restarts: usize,
    pub elapsed_secs: f64,
    pub purity_threshold: f64,
    pub kmeans_threshold: f64,
}

impl RecoveryOutcome {
    pub fn passed(&self) -> bool {
        self.purity >= self.purity_threshold
            && self.kmeans_purity >= self.kmeans_threshold
            && self.final_epoch_loss < self.first_epoch_loss
    }
}

impl fmt::Display for RecoveryOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "argmax-θ purity {:.3} (≥ {}), k-means on e_d {:.3} (≥ {}), loss {:.5} → {:.5}, seed {} of {} restarts",
            self.purity,
            self.purity_threshold,
            self.kmeans_purity,
            self.kmeans_threshold,
            self.first_epoch_loss,
            self.final_epoch_loss,
            self.selected_seed,
            self.restarts
        )
    }
}

pub fn recovery_check(config: &RecoveryConfig) -> Result<RecoveryOutcome, String> {
    let start = Instant::now();
    let corpus = generate(&config.synthetic).map_err(|e| e.to_string())?;
    let points: Vec<Vec<f64>> =
        corpus.documents.iter().map(|d| d.doc_embedding.iter().map(|&x| f64::from(x)).collect()).collect();
    let km = oracles::kmeans(&points, config.synthetic.num_topics, config.kmeans_restarts, config.train.seed);
    let kmeans_purity = purity(&km, &corpus.clusters).map_err(|e| e.to_string())?;

    let (params, report) = train(&corpus.documents, &config.model, &config.train).map_err(|e| e.to_string())?;
    let assignments =
        assign_documents(&corpus.documents, &params, config.train.execution).map_err(|e| e.to_string())?;
    let predicted: Vec<usize> = assignments.iter().map(|a| a.topic).collect();
    let loss = |i: Option<&crate::train::EpochStats>| i.map_or(f64::NAN, |e| e.total);
    Ok(RecoveryOutcome {
        purity: purity(&predicted, &corpus.clusters).map_err(|e| e.to_string())?,
        kmeans_purity,
        first_epoch_loss: loss(report.epochs.first()),
        final_epoch_loss: loss(report.epochs.last()),
        selected_seed: report.seed,
        restarts: config.train.restarts,
        elapsed_secs: start.elapsed().as_secs_f64(),
        purity_threshold: config.purity_threshold,
        kmeans_threshold: config.kmeans_threshold,
    })
}

/// Mean entropy of the deterministic importance weights β over a corpus
/// after training with the given entropy weight, for each seed.
pub fn trained_beta_entropy(
    config: &RecoveryConfig,
    lambda_ent: f64,
    seeds: &[u64],
    epochs: usize,
) -> Result<Vec<f64>, String> {
    let corpus = generate(&config.synthetic).map_err(|e| e.to_string())?;
    let model = ModelConfig { lambda_ent, entropy_sign_follows_prose: true, ..config.model.clone() };
    seeds
        .iter()
        .map(|&seed| {
            let tc = TrainConfig { seed, epochs, restarts: 1, ..config.train.clone() };
            let (params, _) = train(&corpus.documents, &model, &tc).map_err(|e| e.to_string())?;
            let entropies = Execution::Sequential.map(&corpus.documents, |d| {
                forward_document(&params, &d.embeddings, Sampling::Deterministic)
                    .map(|t| f64::from(loss_ent(&t.beta, true)))
            });
            let entropies = entropies.into_iter().collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
            Ok(entropies.iter().sum::<f64>() / entropies.len() as f64)
        })
        .collect()
}
