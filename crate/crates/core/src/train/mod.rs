//! Adam training over a corpus, plus a finite-difference gradient checker.

mod adam;
pub mod gradcheck;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{central_difference, gradient_check, Fault, GradCheckOptions, GradCheckReport};

use crate::corpus::DocumentRecord;
use crate::exec::Execution;
use crate::linalg::norm;
use crate::model::{checkpoint, document_gradients, ModelConfig, ModelError, ModelParams, Sampling};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Write an intermediate checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// L2-normalize each `e_d` before using it as the reconstruction target.
    pub normalize_targets: bool,
    pub plateau_stop: Option<PlateauStop>,
    /// Independent initializations tried; restart `r` uses seed `seed + r`.
    /// The one with the lowest final reconstruction loss is kept.
    pub restarts: usize,
    /// Epochs each restart is trained before selection; 0 means the full
    /// `epochs`. The winner is then retrained from scratch to `epochs`.
    pub screen_epochs: usize,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            learning_rate: 2e-5,
            epochs: 30,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            checkpoint_every: 0,
            normalize_targets: false,
            plateau_stop: None,
            restarts: 1,
            screen_epochs: 0,
            execution: Execution::default(),
        }
    }
}

/// Stop once the epoch loss fails to improve by `min_delta` for `patience` epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauStop {
    pub patience: usize,
    pub min_delta: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(TrainError::InvalidConfig("restarts must be at least 1".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub total: f64,
    pub rec: f64,
    pub ent: f64,
    pub kl: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Not serialized so reports from identical runs are byte-identical.
    #[serde(skip)]
    pub wall_time_secs: f64,
    pub final_checkpoint: Option<PathBuf>,
    /// Seed of the run the returned parameters come from.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub restarts: Vec<RestartStats>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RestartStats {
    pub seed: u64,
    pub epochs: usize,
    pub rec: f64,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("loss diverged at epoch {epoch} on document {doc_id}")]
    DivergedLoss { epoch: usize, doc_id: String },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("document {doc_id}: {source}")]
    Model {
        doc_id: String,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
}

/// Trains a freshly initialized model.
pub fn train(
    docs: &[DocumentRecord],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<(ModelParams<f32>, TrainReport), TrainError> {
    run(docs, model_config, train_config, None)
}

/// Like [`train`], also writing `epoch_<n>.ckpt` files and `model.ckpt` into `dir`.
pub fn train_with_checkpoints(
    docs: &[DocumentRecord],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    dir: &Path,
) -> Result<(ModelParams<f32>, TrainReport), TrainError> {
    run(docs, model_config, train_config, Some(dir))
}

fn target(doc: &DocumentRecord, normalize: bool) -> Vec<f32> {
    let e = &doc.doc_embedding;
    if normalize {
        let n = norm(e);
        if n > 0.0 {
            return e.iter().map(|x| x / n).collect();
        }
    }
    e.clone()
}

fn run(
    docs: &[DocumentRecord],
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(ModelParams<f32>, TrainReport), TrainError> {
    cfg.validate()?;
    if cfg.restarts == 1 {
        return run_single(docs, model_config, cfg, checkpoint_dir);
    }
    let started = Instant::now();
    let screen = if cfg.screen_epochs == 0 { cfg.epochs } else { cfg.screen_epochs.min(cfg.epochs) };
    let mut best: Option<(f64, u64, ModelParams<f32>, TrainReport)> = None;
    let mut stats = Vec::with_capacity(cfg.restarts);
    for r in 0..cfg.restarts {
        let seed = cfg.seed.wrapping_add(r as u64);
        let trial = TrainConfig { seed, epochs: screen, restarts: 1, ..cfg.clone() };
        let (params, report) = run_single(docs, model_config, &trial, None)?;
        let rec = report.epochs.last().map_or(f64::INFINITY, |e| e.rec);
        log::info!("restart {r} (seed {seed}): reconstruction loss {rec:.6} after {screen} epochs");
        stats.push(RestartStats { seed, epochs: report.epochs.len(), rec });
        if best.as_ref().is_none_or(|b| rec < b.0) {
            best = Some((rec, seed, params, report));
        }
    }
    let (_, seed, params, report) = best.expect("at least one restart");
    let (params, mut report) = if screen == cfg.epochs && checkpoint_dir.is_none() {
        (params, report)
    } else {
        let full = TrainConfig { seed, restarts: 1, ..cfg.clone() };
        run_single(docs, model_config, &full, checkpoint_dir)?
    };
    report.restarts = stats;
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok((params, report))
}

/// Trains a freshly initialized model from `cfg.seed`.
fn run_single(
    docs: &[DocumentRecord],
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(ModelParams<f32>, TrainReport), TrainError> {
    let started = Instant::now();
    cfg.validate()?;
    model_config.validate().map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
    if docs.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    for doc in docs {
        if doc.dim() != model_config.embedding_dim {
            return Err(TrainError::Model {
                doc_id: doc.doc_id.clone(),
                source: ModelError::ShapeMismatch {
                    what: "document dimension",
                    expected: model_config.embedding_dim,
                    found: doc.dim(),
                },
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params =
        ModelParams::<f32>::init(model_config, &mut rng).map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
    let targets: Vec<Vec<f32>> = docs.iter().map(|d| target(d, cfg.normalize_targets)).collect();
    let mut adam = Adam::new(cfg.adam(), params.tensors().iter().map(|t| t.data.len()));
    let mut report = TrainReport { seed: cfg.seed, ..TrainReport::default() };
    let mut order: Vec<usize> = (0..docs.len()).collect();
    let mut best = f64::INFINITY;
    let mut stale = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = EpochStats { epoch, ..EpochStats::default() };
        for batch in order.chunks(cfg.batch_size) {
            // Noise is drawn sequentially before any parallel work so the
            // result does not depend on scheduling.
            let jobs: Vec<(usize, Vec<f32>)> = batch
                .iter()
                .map(|&i| {
                    let noise = (0..docs[i].num_tokens()).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
                    (i, noise)
                })
                .collect();
            let results = cfg.execution.map(&jobs, |(i, noise)| {
                document_gradients(&params, &docs[*i].embeddings, &targets[*i], Sampling::Noise(noise))
            });
            let mut accum = ModelParams::<f32>::zeros_like(model_config).expect("validated config");
            for ((i, _), result) in jobs.iter().zip(results) {
                let doc_id = || docs[*i].doc_id.clone();
                // corpus values are validated finite, so non-finite
                // intermediates mean the parameters blew up
                let g = result.map_err(|source| match source {
                    ModelError::NonFinite(_) | ModelError::NonPositiveSigma { .. } => {
                        TrainError::DivergedLoss { epoch, doc_id: doc_id() }
                    }
                    source => TrainError::Model { doc_id: doc_id(), source },
                })?;
                if !g.total.is_finite() || !g.grads.is_finite() {
                    return Err(TrainError::DivergedLoss { epoch, doc_id: doc_id() });
                }
                sums.total += g.total as f64;
                sums.rec += g.parts.rec as f64;
                sums.ent += g.parts.ent as f64;
                sums.kl += g.parts.kl as f64;
                accum.add_scaled(&g.grads, 1.0);
            }
            accum.scale(1.0 / batch.len() as f32);
            let grads: Vec<&[f32]> = accum.tensors().into_iter().map(|t| t.data).collect();
            adam.step(params.tensors_mut(), grads);
        }
        let n = docs.len() as f64;
        sums.total /= n;
        sums.rec /= n;
        sums.ent /= n;
        sums.kl /= n;
        log::debug!("epoch {epoch}: loss {:.6}", sums.total);
        let epoch_loss = sums.total;
        report.epochs.push(sums);

        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                checkpoint::save(&params, &dir.join(format!("epoch_{epoch}.ckpt")))?;
            }
        }
        if let Some(stop) = cfg.plateau_stop {
            if epoch_loss < best - stop.min_delta {
                best = epoch_loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= stop.patience {
                    break;
                }
            }
        }
    }

    if let Some(dir) = checkpoint_dir {
        let path = dir.join("model.ckpt");
        checkpoint::save(&params, &path)?;
        report.final_checkpoint = Some(path);
    }
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok((params, report))
}
