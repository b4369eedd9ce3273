//! Analytic gradients versus central finite differences, in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::exec::Execution;
use crate::linalg::Matrix;
use crate::model::{document_gradients, forward_document, total_loss, ModelConfig, ModelError, ModelParams, Sampling};

pub const MAX_CHECK_DIM: usize = 8;
pub const MAX_CHECK_TOPICS: usize = 4;
pub const MAX_CHECK_TOKENS: usize = 6;
pub const DEFAULT_STEP: f64 = 1e-4;
/// Gradient norms below this are compared in absolute terms. Some blocks
/// (e.g. attention key biases, which shift every logit of a query equally)
/// have identically zero gradient, leaving only finite-difference round-off.
const NORM_FLOOR: f64 = 1e-6;

/// Deliberate defects used to confirm the checker can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Flip the sign of the KL term in the loss seen by finite differences.
    KlSignFlip,
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub seed: u64,
    pub fault: Option<Fault>,
    pub execution: Execution,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: DEFAULT_STEP, seed: 0, fault: None, execution: Execution::default() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BlockError {
    pub trial: usize,
    pub tensor: String,
    pub relative_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub trials: usize,
    pub max_relative_error: f64,
    /// Worst block of every trial.
    pub worst: Vec<BlockError>,
}

/// `(f(p + h·e_i) − f(p − h·e_i)) / 2h` for element `index` of tensor `tensor`.
pub fn central_difference<F>(params: &ModelParams<f64>, tensor: usize, index: usize, step: f64, loss: F) -> f64
where
    F: Fn(&ModelParams<f64>) -> f64,
{
    let mut probe = params.clone();
    let original = probe.tensors()[tensor].data[index];
    probe.tensors_mut()[tensor][index] = original + step;
    let plus = loss(&probe);
    probe.tensors_mut()[tensor][index] = original - step;
    let minus = loss(&probe);
    (plus - minus) / (2.0 * step)
}

struct Instance {
    params: ModelParams<f64>,
    h: Matrix<f64>,
    e_d: Vec<f64>,
    noise: Vec<f64>,
}

fn random_instance(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Instance {
    let mut params = ModelParams::<f64>::init(config, rng).expect("validated config");
    for t in params.tensors_mut() {
        for x in t.iter_mut() {
            *x += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let n = rng.random_range(1..=MAX_CHECK_TOKENS);
    let d = config.embedding_dim;
    let mut normal = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.sample(StandardNormal)).collect() };
    let h = Matrix::from_vec(n, d, normal(n * d)).unwrap();
    let e_d = normal(d);
    let noise = normal(n);
    Instance { params, h, e_d, noise }
}

fn loss_of(inst: &Instance, params: &ModelParams<f64>, fault: Option<Fault>) -> f64 {
    let trace = forward_document(params, &inst.h, Sampling::Noise(&inst.noise)).expect("shapes are consistent");
    let mut parts = trace.losses(&inst.e_d, &params.config).expect("shapes are consistent");
    if fault == Some(Fault::KlSignFlip) {
        parts.kl = -parts.kl;
    }
    total_loss(&parts, &params.config)
}

fn check_trial(config: &ModelConfig, trial: usize, opts: &GradCheckOptions) -> BlockError {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(trial as u64));
    let inst = random_instance(config, &mut rng);
    let analytic = document_gradients(&inst.params, &inst.h, &inst.e_d, Sampling::Noise(&inst.noise))
        .expect("shapes are consistent")
        .grads;
    let mut worst = BlockError { trial, tensor: String::new(), relative_error: 0.0 };
    for (ti, view) in analytic.tensors().iter().enumerate() {
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for (i, &a) in view.data.iter().enumerate() {
            let num = central_difference(&inst.params, ti, i, opts.step, |p| loss_of(&inst, p, opts.fault));
            diff2 += (a - num) * (a - num);
            a2 += a * a;
            n2 += num * num;
        }
        let denom = a2.sqrt().max(n2.sqrt()).max(NORM_FLOOR);
        let rel = diff2.sqrt() / denom;
        if rel > worst.relative_error || worst.tensor.is_empty() {
            worst.relative_error = rel;
            worst.tensor = view.name.clone();
        }
    }
    worst
}

/// Compares analytic and central-difference gradients of the total loss for
/// every parameter tensor over `trials` random instances.
///
/// The error of a tensor is `‖g_analytic − g_numeric‖₂ / max(‖g_analytic‖₂, ‖g_numeric‖₂)`.
pub fn gradient_check(
    config: &ModelConfig,
    trials: usize,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, ModelError> {
    config.validate()?;
    if config.embedding_dim > MAX_CHECK_DIM || config.num_topics > MAX_CHECK_TOPICS {
        return Err(ModelError::InvalidConfig(format!(
            "gradient check needs D ≤ {MAX_CHECK_DIM} and K ≤ {MAX_CHECK_TOPICS}"
        )));
    }
    let worst = opts.execution.map_range(trials, |t| check_trial(config, t, opts));
    let max_relative_error = worst.iter().map(|w| w.relative_error).fold(0.0, f64::max);
    Ok(GradCheckReport { trials, max_relative_error, worst })
}

/// Small architecture used by the verification suites.
pub fn small_config(embedding_dim: usize, num_topics: usize) -> ModelConfig {
    ModelConfig {
        encoder_hidden: 6,
        imp_model_dim: 8,
        imp_layers: 2,
        imp_heads: 4,
        imp_ffn_dim: 8,
        ..ModelConfig::new(embedding_dim, num_topics)
    }
}
