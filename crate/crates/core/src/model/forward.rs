use serde::Serialize;

use super::params::{ImportanceNet, LayerNorm, ModelParams, TopicEncoder, TransformerBlock};
use super::{check_len, ModelConfig, ModelError};
use crate::corpus::DocumentRecord;
use crate::linalg::{gelu, lit, softmax, softmax_in_place, Matrix, Real};

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

/// Everything one forward pass produces for a document.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace<T> {
    /// Token topic distributions `t_i`, `N × K`.
    pub t: Matrix<T>,
    pub mu: Vec<T>,
    pub logvar: Vec<T>,
    pub sigma: Vec<T>,
    pub alpha: Vec<T>,
    /// Importance weights over tokens (sum to 1).
    pub beta: Vec<T>,
    /// Document topic vector (sums to 1).
    pub theta: Vec<T>,
    /// Reconstructed document embedding `θ · W_d`.
    pub e_recon: Vec<T>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossParts<T> {
    pub rec: T,
    pub ent: T,
    pub kl: T,
}

/// How `α` is drawn from `N(μ, σ²)`.
#[derive(Clone, Copy, Debug)]
pub enum Sampling<'a, T> {
    /// `α = μ`, the inference convention.
    Deterministic,
    /// `α = μ + σ ⊙ ε` with caller-supplied standard-normal `ε`.
    Noise(&'a [T]),
}

pub(crate) struct EncoderCache<T> {
    pub pre: Matrix<T>,
    pub act: Matrix<T>,
}

pub(crate) struct NormCache<T> {
    pub xhat: Matrix<T>,
    pub inv_std: Vec<T>,
}

pub(crate) struct BlockCache<T> {
    pub attn_norm: NormCache<T>,
    pub attn_in: Matrix<T>,
    pub q: Matrix<T>,
    pub k: Matrix<T>,
    pub v: Matrix<T>,
    /// Attention probabilities, one `N × N` matrix per head.
    pub probs: Vec<Matrix<T>>,
    pub context: Matrix<T>,
    pub ffn_norm: NormCache<T>,
    pub ffn_in: Matrix<T>,
    pub ffn_pre: Matrix<T>,
    pub ffn_act: Matrix<T>,
}

pub(crate) struct ImportanceCache<T> {
    pub blocks: Vec<BlockCache<T>>,
    pub final_norm: NormCache<T>,
    pub head_in: Matrix<T>,
}

pub(crate) struct DocCache<T> {
    pub encoder: EncoderCache<T>,
    pub importance: ImportanceCache<T>,
}

fn check_input<T: Real>(h: &Matrix<T>, config: &ModelConfig) -> Result<(), ModelError> {
    check_len("embedding columns", config.embedding_dim, h.cols())?;
    if h.rows() == 0 {
        return Err(ModelError::ShapeMismatch { what: "token count", expected: 1, found: 0 });
    }
    Ok(())
}

pub(crate) fn encoder_forward<T: Real>(enc: &TopicEncoder<T>, h: &Matrix<T>) -> (Matrix<T>, EncoderCache<T>) {
    let pre = enc.hidden.forward(h);
    let mut act = pre.clone();
    act.as_mut_slice().iter_mut().for_each(|x| *x = gelu(*x));
    let mut t = enc.output.forward(&act);
    for r in 0..t.rows() {
        softmax_in_place(t.row_mut(r));
    }
    (t, EncoderCache { pre, act })
}

/// Token topic distributions: row `i` is `softmax(MLP(h_i))`.
pub fn encode_token_topics<T: Real>(h: &Matrix<T>, params: &ModelParams<T>) -> Result<Matrix<T>, ModelError> {
    check_input(h, &params.config)?;
    Ok(encoder_forward(&params.encoder, h).0)
}

pub(crate) fn layer_norm_forward<T: Real>(norm: &LayerNorm<T>, x: &Matrix<T>) -> (Matrix<T>, NormCache<T>) {
    let n = x.cols();
    let eps = lit::<T>(LAYER_NORM_EPS);
    let count = lit::<T>(n as f64);
    let mut xhat = Matrix::zeros(x.rows(), n);
    let mut y = Matrix::zeros(x.rows(), n);
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() / count;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
        let inv = T::one() / (var + eps).sqrt();
        inv_std.push(inv);
        for c in 0..n {
            let xh = (row[c] - mean) * inv;
            xhat.set(r, c, xh);
            y.set(r, c, xh * norm.gain[c] + norm.bias[c]);
        }
    }
    (y, NormCache { xhat, inv_std })
}

fn block_forward<T: Real>(block: &TransformerBlock<T>, heads: usize, x: &Matrix<T>) -> (Matrix<T>, BlockCache<T>) {
    let n = x.rows();
    let model = x.cols();
    let dh = model / heads;
    let scale = T::one() / lit::<T>(dh as f64).sqrt();

    let (attn_in, attn_norm) = layer_norm_forward(&block.attn_norm, x);
    let q = block.query.forward(&attn_in);
    let k = block.key.forward(&attn_in);
    let v = block.value.forward(&attn_in);

    let mut context = Matrix::zeros(n, model);
    let mut probs = Vec::with_capacity(heads);
    for head in 0..heads {
        let cols = head * dh..(head + 1) * dh;
        let mut p = Matrix::zeros(n, n);
        for i in 0..n {
            let qi = &q.row(i)[cols.clone()];
            for j in 0..n {
                let kj = &k.row(j)[cols.clone()];
                let s = qi.iter().zip(kj).fold(T::zero(), |a, (&x, &y)| a + x * y) * scale;
                p.set(i, j, s);
            }
            softmax_in_place(p.row_mut(i));
        }
        for i in 0..n {
            for j in 0..n {
                let pij = p.get(i, j);
                let vj = &v.row(j)[cols.clone()];
                let out = &mut context.row_mut(i)[cols.clone()];
                for (o, &vv) in out.iter_mut().zip(vj) {
                    *o += pij * vv;
                }
            }
        }
        probs.push(p);
    }
    let mut mid = block.output.forward(&context);
    mid.add_assign(x);

    let (ffn_in, ffn_norm) = layer_norm_forward(&block.ffn_norm, &mid);
    let ffn_pre = block.ffn_in.forward(&ffn_in);
    let mut ffn_act = ffn_pre.clone();
    ffn_act.as_mut_slice().iter_mut().for_each(|x| *x = gelu(*x));
    let mut out = block.ffn_out.forward(&ffn_act);
    out.add_assign(&mid);

    let cache = BlockCache { attn_norm, attn_in, q, k, v, probs, context, ffn_norm, ffn_in, ffn_pre, ffn_act };
    (out, cache)
}

/// Returns `(μ, log σ²)` per token and the cache for the backward pass.
pub(crate) fn importance_net_forward<T: Real>(
    net: &ImportanceNet<T>,
    heads: usize,
    h: &Matrix<T>,
) -> (Vec<T>, Vec<T>, ImportanceCache<T>) {
    let mut x = net.input.forward(h);
    let mut blocks = Vec::with_capacity(net.blocks.len());
    for block in &net.blocks {
        let (next, cache) = block_forward(block, heads, &x);
        blocks.push(cache);
        x = next;
    }
    let (head_in, final_norm) = layer_norm_forward(&net.final_norm, &x);
    let out = net.head.forward(&head_in);
    let mu = (0..out.rows()).map(|r| out.get(r, 0)).collect();
    let logvar = (0..out.rows()).map(|r| out.get(r, 1)).collect();
    (mu, logvar, ImportanceCache { blocks, final_norm, head_in })
}

/// Per-token Gaussian importance parameters `(μ, σ)` with `σ = exp(½·logvar)`.
pub fn importance_forward<T: Real>(h: &Matrix<T>, params: &ModelParams<T>) -> Result<(Vec<T>, Vec<T>), ModelError> {
    check_input(h, &params.config)?;
    let (mu, logvar, _) = importance_net_forward(&params.importance, params.config.imp_heads, h);
    let sigma = logvar.iter().map(|&lv| (lit::<T>(0.5) * lv).exp()).collect();
    Ok((mu, sigma))
}

/// Reparameterized draw `α_i = μ_i + σ_i·ε_i`.
pub fn sample_importance<T: Real>(mu: &[T], sigma: &[T], noise: &[T]) -> Result<Vec<T>, ModelError> {
    check_len("sigma", mu.len(), sigma.len())?;
    check_len("noise", mu.len(), noise.len())?;
    if let Some(index) = sigma.iter().position(|&s| !(s > T::zero())) {
        return Err(ModelError::NonPositiveSigma { index });
    }
    Ok(mu.iter().zip(sigma).zip(noise).map(|((&m, &s), &e)| m + s * e).collect())
}

/// `β = softmax(α)`.
pub fn normalize_importance<T: Real>(alpha: &[T]) -> Result<Vec<T>, ModelError> {
    if alpha.iter().any(|a| !a.is_finite()) {
        return Err(ModelError::NonFinite("alpha"));
    }
    Ok(softmax(alpha))
}

pub(crate) fn weighted_topic_sum<T: Real>(t: &Matrix<T>, beta: &[T]) -> Vec<T> {
    let mut s = vec![T::zero(); t.cols()];
    for (row, &b) in t.row_iter().zip(beta) {
        for (acc, &x) in s.iter_mut().zip(row) {
            *acc += b * x;
        }
    }
    s
}

/// `θ = softmax(Σ_i β_i t_i)`.
pub fn document_topic<T: Real>(t: &Matrix<T>, beta: &[T]) -> Result<Vec<T>, ModelError> {
    check_len("beta", t.rows(), beta.len())?;
    Ok(softmax(&weighted_topic_sum(t, beta)))
}

/// `e_d′ = θ · W_d`.
pub fn decode<T: Real>(theta: &[T], decoder: &Matrix<T>) -> Result<Vec<T>, ModelError> {
    check_len("theta", decoder.rows(), theta.len())?;
    let mut out = vec![T::zero(); decoder.cols()];
    for (row, &th) in decoder.row_iter().zip(theta) {
        for (o, &w) in out.iter_mut().zip(row) {
            *o += th * w;
        }
    }
    Ok(out)
}

/// Mean squared error over coordinates.
pub fn loss_rec<T: Real>(e_recon: &[T], e_d: &[T]) -> Result<T, ModelError> {
    check_len("reconstruction target", e_recon.len(), e_d.len())?;
    let sum: T = e_recon.iter().zip(e_d).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok(sum / lit::<T>(e_d.len().max(1) as f64))
}

/// Entropy regularizer. With `prose_sign` it is `−Σ β log β` (≥ 0), otherwise
/// `Σ β log β`. `0·log 0 = 0`.
pub fn loss_ent<T: Real>(beta: &[T], prose_sign: bool) -> T {
    let neg_entropy: T = beta.iter().filter(|&&b| b > T::zero()).map(|&b| b * b.ln()).sum();
    if prose_sign {
        -neg_entropy
    } else {
        neg_entropy
    }
}

/// `Σ_i [ln(1/σ_i) + (σ_i² + μ_i² − 1)/2]`, the KL divergence of
/// `N(μ_i, σ_i²)` from `N(0, 1)`, summed over tokens.
pub fn loss_kl<T: Real>(mu: &[T], sigma: &[T]) -> Result<T, ModelError> {
    check_len("sigma", mu.len(), sigma.len())?;
    let half = lit::<T>(0.5);
    let mut total = T::zero();
    for (i, (&m, &s)) in mu.iter().zip(sigma).enumerate() {
        if !(s > T::zero()) {
            return Err(ModelError::NonPositiveSigma { index: i });
        }
        total += -s.ln() + half * (s * s + m * m - T::one());
    }
    Ok(total)
}

/// Same as [`loss_kl`] in terms of `log σ²`, which is what the network emits.
pub(crate) fn loss_kl_logvar<T: Real>(mu: &[T], logvar: &[T]) -> T {
    let half = lit::<T>(0.5);
    mu.iter().zip(logvar).map(|(&m, &lv)| -half * lv + half * (lv.exp() + m * m - T::one())).sum()
}

/// `L = L_rec + λ_ent·L_ent + λ_KL·L_KL`.
pub fn total_loss<T: Real>(parts: &LossParts<T>, config: &ModelConfig) -> T {
    parts.rec + lit::<T>(config.lambda_ent) * parts.ent + lit::<T>(config.lambda_kl) * parts.kl
}

pub(crate) fn forward_with_cache<T: Real>(
    params: &ModelParams<T>,
    h: &Matrix<T>,
    sampling: Sampling<'_, T>,
) -> Result<(ForwardTrace<T>, DocCache<T>), ModelError> {
    let config = &params.config;
    check_input(h, config)?;
    let n = h.rows();
    let (t, encoder) = encoder_forward(&params.encoder, h);
    let (mu, logvar, importance) = importance_net_forward(&params.importance, config.imp_heads, h);
    let sigma: Vec<T> = logvar.iter().map(|&lv| (lit::<T>(0.5) * lv).exp()).collect();
    let alpha = match sampling {
        Sampling::Deterministic => mu.clone(),
        Sampling::Noise(noise) => {
            check_len("noise", n, noise.len())?;
            mu.iter().zip(&sigma).zip(noise).map(|((&m, &s), &e)| m + s * e).collect()
        }
    };
    let beta = normalize_importance(&alpha)?;
    let theta = document_topic(&t, &beta)?;
    let e_recon = decode(&theta, &params.decoder)?;
    let trace = ForwardTrace { t, mu, logvar, sigma, alpha, beta, theta, e_recon };
    Ok((trace, DocCache { encoder, importance }))
}

/// Full forward pass over a token embedding matrix.
pub fn forward_document<T: Real>(
    params: &ModelParams<T>,
    h: &Matrix<T>,
    sampling: Sampling<'_, T>,
) -> Result<ForwardTrace<T>, ModelError> {
    forward_with_cache(params, h, sampling).map(|(trace, _)| trace)
}

/// Forward pass over a stored document.
pub fn infer_theta(
    record: &DocumentRecord,
    params: &ModelParams<f32>,
    sampling: Sampling<'_, f32>,
) -> Result<ForwardTrace<f32>, ModelError> {
    check_len("document dimension", params.config.embedding_dim, record.dim())?;
    forward_document(params, &record.embeddings, sampling)
}

impl<T: Real> ForwardTrace<T> {
    pub fn losses(&self, e_d: &[T], config: &ModelConfig) -> Result<LossParts<T>, ModelError> {
        Ok(LossParts {
            rec: loss_rec(&self.e_recon, e_d)?,
            ent: loss_ent(&self.beta, config.entropy_sign_follows_prose),
            kl: loss_kl_logvar(&self.mu, &self.logvar),
        })
    }
}
