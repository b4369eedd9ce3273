//! Parameter tensors of the model.

use rand::Rng;

use super::{ModelConfig, ModelError};
use crate::linalg::{lit, Matrix, Real};

/// Affine map `x ↦ x·W + b` with `W` stored `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self { weight: Matrix::zeros(input, output), bias: vec![T::zero(); output] }
    }

    fn xavier<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(input, output);
        let bound = (6.0 / (input + output) as f64).sqrt();
        for w in layer.weight.as_mut_slice() {
            *w = lit(rng.random_range(-bound..bound));
        }
        layer
    }

    pub fn forward(&self, x: &Matrix<T>) -> Matrix<T> {
        let mut y = x.matmul(&self.weight);
        y.add_row_vector(&self.bias);
        y
    }

    /// Accumulates parameter gradients into `grad`, returns `dL/dx`.
    pub fn backward(&self, x: &Matrix<T>, dy: &Matrix<T>, grad: &mut Linear<T>) -> Matrix<T> {
        grad.weight.add_assign(&x.t_matmul(dy));
        dy.accumulate_col_sums(&mut grad.bias);
        dy.matmul_t(&self.weight)
    }

    fn push<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a, T>>) {
        out.push(TensorView {
            name: format!("{prefix}.weight"),
            dims: vec![self.weight.rows(), self.weight.cols()],
            data: self.weight.as_slice(),
        });
        out.push(TensorView { name: format!("{prefix}.bias"), dims: vec![self.bias.len()], data: &self.bias });
    }

    fn push_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        out.push(self.weight.as_mut_slice());
        out.push(&mut self.bias);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<T> {
    pub gain: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn identity(dim: usize) -> Self {
        Self { gain: vec![T::one(); dim], bias: vec![T::zero(); dim] }
    }

    fn push<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a, T>>) {
        out.push(TensorView { name: format!("{prefix}.gain"), dims: vec![self.gain.len()], data: &self.gain });
        out.push(TensorView { name: format!("{prefix}.bias"), dims: vec![self.bias.len()], data: &self.bias });
    }

    fn push_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        out.push(&mut self.gain);
        out.push(&mut self.bias);
    }
}

/// Pre-norm transformer block: self-attention then feed-forward, each
/// wrapped in a residual connection.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerBlock<T> {
    pub attn_norm: LayerNorm<T>,
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
    pub ffn_norm: LayerNorm<T>,
    pub ffn_in: Linear<T>,
    pub ffn_out: Linear<T>,
}

impl<T: Real> TransformerBlock<T> {
    fn zeros(model: usize, ffn: usize) -> Self {
        Self {
            attn_norm: LayerNorm::identity(model),
            query: Linear::zeros(model, model),
            key: Linear::zeros(model, model),
            value: Linear::zeros(model, model),
            output: Linear::zeros(model, model),
            ffn_norm: LayerNorm::identity(model),
            ffn_in: Linear::zeros(model, ffn),
            ffn_out: Linear::zeros(ffn, model),
        }
    }

    fn init<R: Rng + ?Sized>(model: usize, ffn: usize, rng: &mut R) -> Self {
        Self {
            attn_norm: LayerNorm::identity(model),
            query: Linear::xavier(model, model, rng),
            key: Linear::xavier(model, model, rng),
            value: Linear::xavier(model, model, rng),
            output: Linear::xavier(model, model, rng),
            ffn_norm: LayerNorm::identity(model),
            ffn_in: Linear::xavier(model, ffn, rng),
            ffn_out: Linear::xavier(ffn, model, rng),
        }
    }

    fn push<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a, T>>) {
        self.attn_norm.push(&format!("{prefix}.attn_norm"), out);
        self.query.push(&format!("{prefix}.query"), out);
        self.key.push(&format!("{prefix}.key"), out);
        self.value.push(&format!("{prefix}.value"), out);
        self.output.push(&format!("{prefix}.output"), out);
        self.ffn_norm.push(&format!("{prefix}.ffn_norm"), out);
        self.ffn_in.push(&format!("{prefix}.ffn_in"), out);
        self.ffn_out.push(&format!("{prefix}.ffn_out"), out);
    }

    fn push_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        self.attn_norm.push_mut(out);
        self.query.push_mut(out);
        self.key.push_mut(out);
        self.value.push_mut(out);
        self.output.push_mut(out);
        self.ffn_norm.push_mut(out);
        self.ffn_in.push_mut(out);
        self.ffn_out.push_mut(out);
    }
}

/// Token encoder: two-layer GELU MLP from `D` to `K` logits.
#[derive(Clone, Debug, PartialEq)]
pub struct TopicEncoder<T> {
    pub hidden: Linear<T>,
    pub output: Linear<T>,
}

/// Importance network: input projection, transformer stack without
/// positional encoding, final layer norm, and a Gaussian head emitting
/// `(μ, log σ²)` per token.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceNet<T> {
    pub input: Linear<T>,
    pub blocks: Vec<TransformerBlock<T>>,
    pub final_norm: LayerNorm<T>,
    pub head: Linear<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub encoder: TopicEncoder<T>,
    pub importance: ImportanceNet<T>,
    /// Decoder `W_d`, `K × D`.
    pub decoder: Matrix<T>,
}

/// Borrowed view of one named parameter tensor.
#[derive(Debug)]
pub struct TensorView<'a, T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a [T],
}

impl<T: Real> ModelParams<T> {
    /// All-zero encoder/decoder/attention weights, identity layer norms.
    pub fn zeros(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let c = config;
        Ok(Self {
            config: c.clone(),
            encoder: TopicEncoder {
                hidden: Linear::zeros(c.embedding_dim, c.encoder_hidden),
                output: Linear::zeros(c.encoder_hidden, c.num_topics),
            },
            importance: ImportanceNet {
                input: Linear::zeros(c.embedding_dim, c.imp_model_dim),
                blocks: (0..c.imp_layers).map(|_| TransformerBlock::zeros(c.imp_model_dim, c.imp_ffn_dim)).collect(),
                final_norm: LayerNorm::identity(c.imp_model_dim),
                head: Linear::zeros(c.imp_model_dim, 2),
            },
            decoder: Matrix::zeros(c.num_topics, c.embedding_dim),
        })
    }

    /// Every entry zero, including layer-norm gains; used to accumulate gradients.
    pub fn zeros_like(config: &ModelConfig) -> Result<Self, ModelError> {
        let mut p = Self::zeros(config)?;
        for t in p.tensors_mut() {
            t.fill(T::zero());
        }
        Ok(p)
    }

    /// Xavier-uniform weights, zero biases, identity layer norms. The
    /// Gaussian head's log-variance bias starts at 0 (σ = 1).
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let c = config;
        let encoder = TopicEncoder {
            hidden: Linear::xavier(c.embedding_dim, c.encoder_hidden, rng),
            output: Linear::xavier(c.encoder_hidden, c.num_topics, rng),
        };
        let input = Linear::xavier(c.embedding_dim, c.imp_model_dim, rng);
        let blocks = (0..c.imp_layers).map(|_| TransformerBlock::init(c.imp_model_dim, c.imp_ffn_dim, rng)).collect();
        let head = Linear::xavier(c.imp_model_dim, 2, rng);
        let decoder = Linear::<T>::xavier(c.num_topics, c.embedding_dim, rng).weight;
        Ok(Self {
            config: c.clone(),
            encoder,
            importance: ImportanceNet { input, blocks, final_norm: LayerNorm::identity(c.imp_model_dim), head },
            decoder,
        })
    }

    /// Named tensors in a fixed canonical order.
    pub fn tensors(&self) -> Vec<TensorView<'_, T>> {
        let mut out = Vec::new();
        self.encoder.hidden.push("encoder.hidden", &mut out);
        self.encoder.output.push("encoder.output", &mut out);
        self.importance.input.push("importance.input", &mut out);
        for (i, b) in self.importance.blocks.iter().enumerate() {
            b.push(&format!("importance.blocks.{i}"), &mut out);
        }
        self.importance.final_norm.push("importance.final_norm", &mut out);
        self.importance.head.push("importance.head", &mut out);
        out.push(TensorView {
            name: "decoder".into(),
            dims: vec![self.decoder.rows(), self.decoder.cols()],
            data: self.decoder.as_slice(),
        });
        out
    }

    /// Mutable tensor slices, same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        self.encoder.hidden.push_mut(&mut out);
        self.encoder.output.push_mut(&mut out);
        self.importance.input.push_mut(&mut out);
        for b in &mut self.importance.blocks {
            b.push_mut(&mut out);
        }
        self.importance.final_norm.push_mut(&mut out);
        self.importance.head.push_mut(&mut out);
        out.push(self.decoder.as_mut_slice());
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros(&self.config).expect("config already validated");
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            for (d, &s) in dst.iter_mut().zip(src.data) {
                *d = U::from_f64(s.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan());
            }
        }
        out
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &ModelParams<T>, scale: T) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, &s) in dst.iter_mut().zip(src.data) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= factor;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tensor_views_and_slices_line_up() {
        let cfg = ModelConfig { encoder_hidden: 5, imp_model_dim: 8, imp_ffn_dim: 6, ..ModelConfig::new(3, 4) };
        let mut p = ModelParams::<f32>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let lens: Vec<usize> = p.tensors().iter().map(|t| t.data.len()).collect();
        let dims: Vec<usize> = p.tensors().iter().map(|t| t.dims.iter().product()).collect();
        let mut_lens: Vec<usize> = p.tensors_mut().iter().map(|t| t.len()).collect();
        assert_eq!(lens, dims);
        assert_eq!(lens, mut_lens);
        // 2 (encoder) + 1 (input) + 8 per block + 1 (final norm) + 1 (head) linear/norm pairs.
        assert_eq!(p.tensors().len(), 2 * (2 + 1 + 8 * 2 + 1 + 1) + 1);
    }

    #[test]
    fn init_biases_are_zero_and_sigma_starts_at_one() {
        let cfg = ModelConfig::new(4, 3);
        let p = ModelParams::<f32>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert!(p.importance.head.bias.iter().all(|&b| b == 0.0));
        let bound = (6.0f32 / (4.0 + 512.0)).sqrt();
        assert!(p.encoder.hidden.weight.as_slice().iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn invalid_head_split_is_rejected() {
        let cfg = ModelConfig { imp_model_dim: 10, ..ModelConfig::new(4, 3) };
        assert!(ModelParams::<f32>::zeros(&cfg).is_err());
    }
}
