//! Reverse-mode gradients of the per-document total loss.

use super::forward::{forward_with_cache, BlockCache, DocCache, ForwardTrace, LossParts, NormCache, Sampling};
use super::params::{LayerNorm, ModelParams, TransformerBlock};
use super::{check_len, total_loss, ModelError};
use crate::linalg::{gelu_grad, lit, softmax_backward, Matrix, Real};

/// Loss components, total, forward trace and parameter gradients for one document.
#[derive(Clone, Debug)]
pub struct DocumentGradients<T> {
    pub parts: LossParts<T>,
    pub total: T,
    pub trace: ForwardTrace<T>,
    pub grads: ModelParams<T>,
}

fn layer_norm_backward<T: Real>(
    norm: &LayerNorm<T>,
    cache: &NormCache<T>,
    dy: &Matrix<T>,
    grad: &mut LayerNorm<T>,
) -> Matrix<T> {
    let n = dy.cols();
    let count = lit::<T>(n as f64);
    let mut dx = Matrix::zeros(dy.rows(), n);
    let mut dxhat = vec![T::zero(); n];
    for r in 0..dy.rows() {
        let xhat = cache.xhat.row(r);
        let d = dy.row(r);
        for c in 0..n {
            grad.gain[c] += d[c] * xhat[c];
            grad.bias[c] += d[c];
            dxhat[c] = d[c] * norm.gain[c];
        }
        let mean_d = dxhat.iter().copied().sum::<T>() / count;
        let mean_dx = dxhat.iter().zip(xhat).map(|(&a, &b)| a * b).sum::<T>() / count;
        let inv = cache.inv_std[r];
        for (c, out) in dx.row_mut(r).iter_mut().enumerate() {
            *out = inv * (dxhat[c] - mean_d - xhat[c] * mean_dx);
        }
    }
    dx
}

fn block_backward<T: Real>(
    block: &TransformerBlock<T>,
    cache: &BlockCache<T>,
    heads: usize,
    dout: &Matrix<T>,
    grad: &mut TransformerBlock<T>,
) -> Matrix<T> {
    let n = dout.rows();
    let model = dout.cols();
    let dh = model / heads;
    let scale = T::one() / lit::<T>(dh as f64).sqrt();

    // Feed-forward branch.
    let mut d_act = block.ffn_out.backward(&cache.ffn_act, dout, &mut grad.ffn_out);
    for (d, &pre) in d_act.as_mut_slice().iter_mut().zip(cache.ffn_pre.as_slice()) {
        *d *= gelu_grad(pre);
    }
    let d_ffn_in = block.ffn_in.backward(&cache.ffn_in, &d_act, &mut grad.ffn_in);
    let mut dmid = layer_norm_backward(&block.ffn_norm, &cache.ffn_norm, &d_ffn_in, &mut grad.ffn_norm);
    dmid.add_assign(dout);

    // Attention branch.
    let dcontext = block.output.backward(&cache.context, &dmid, &mut grad.output);
    let mut dq = Matrix::zeros(n, model);
    let mut dk = Matrix::zeros(n, model);
    let mut dv = Matrix::zeros(n, model);
    let mut dp_row = vec![T::zero(); n];
    for (head, p) in cache.probs.iter().enumerate() {
        let cols = head * dh..(head + 1) * dh;
        for i in 0..n {
            let dc = &dcontext.row(i)[cols.clone()];
            for j in 0..n {
                let vj = &cache.v.row(j)[cols.clone()];
                dp_row[j] = dc.iter().zip(vj).fold(T::zero(), |a, (&x, &y)| a + x * y);
                let pij = p.get(i, j);
                for (o, &g) in dv.row_mut(j)[cols.clone()].iter_mut().zip(dc) {
                    *o += pij * g;
                }
            }
            let ds = softmax_backward(p.row(i), &dp_row);
            for j in 0..n {
                let s = ds[j] * scale;
                if s == T::zero() {
                    continue;
                }
                for c in cols.clone() {
                    let kjc = cache.k.get(j, c);
                    let qic = cache.q.get(i, c);
                    dq.row_mut(i)[c] += s * kjc;
                    dk.row_mut(j)[c] += s * qic;
                }
            }
        }
    }
    let mut d_attn_in = block.query.backward(&cache.attn_in, &dq, &mut grad.query);
    d_attn_in.add_assign(&block.key.backward(&cache.attn_in, &dk, &mut grad.key));
    d_attn_in.add_assign(&block.value.backward(&cache.attn_in, &dv, &mut grad.value));
    let mut dx = layer_norm_backward(&block.attn_norm, &cache.attn_norm, &d_attn_in, &mut grad.attn_norm);
    dx.add_assign(&dmid);
    dx
}

/// Forward + backward for one document.
///
/// `noise` is the `ε` vector of the reparameterized draw; the deterministic
/// mode corresponds to `ε = 0`.
pub fn document_gradients<T: Real>(
    params: &ModelParams<T>,
    h: &Matrix<T>,
    e_d: &[T],
    sampling: Sampling<'_, T>,
) -> Result<DocumentGradients<T>, ModelError> {
    let config = &params.config;
    check_len("reconstruction target", config.embedding_dim, e_d.len())?;
    let (trace, cache) = forward_with_cache(params, h, sampling)?;
    let parts = trace.losses(e_d, config)?;
    let total = total_loss(&parts, config);
    let grads = backward(params, h, e_d, sampling, &trace, &cache)?;
    Ok(DocumentGradients { parts, total, trace, grads })
}

fn backward<T: Real>(
    params: &ModelParams<T>,
    h: &Matrix<T>,
    e_d: &[T],
    sampling: Sampling<'_, T>,
    trace: &ForwardTrace<T>,
    cache: &DocCache<T>,
) -> Result<ModelParams<T>, ModelError> {
    let config = &params.config;
    let mut grads = ModelParams::zeros_like(config)?;
    let n = h.rows();
    let k = config.num_topics;
    let d = config.embedding_dim;
    let lambda_ent = lit::<T>(config.lambda_ent);
    let lambda_kl = lit::<T>(config.lambda_kl);
    let half = lit::<T>(0.5);

    // Reconstruction: L_rec = (1/D) Σ (e' − e)².
    let de: Vec<T> =
        trace.e_recon.iter().zip(e_d).map(|(&a, &b)| lit::<T>(2.0) * (a - b) / lit::<T>(d as f64)).collect();
    let mut dtheta = vec![T::zero(); k];
    for topic in 0..k {
        let th = trace.theta[topic];
        let grow = grads.decoder.row_mut(topic);
        for (g, &de_j) in grow.iter_mut().zip(&de) {
            *g += th * de_j;
        }
        dtheta[topic] = params.decoder.row(topic).iter().zip(&de).fold(T::zero(), |a, (&w, &g)| a + w * g);
    }

    // θ = softmax(s), s = Σ β_i t_i.
    let ds = softmax_backward(&trace.theta, &dtheta);
    let mut dbeta: Vec<T> =
        trace.t.row_iter().map(|row| row.iter().zip(&ds).fold(T::zero(), |a, (&x, &y)| a + x * y)).collect();
    let mut dt = Matrix::zeros(n, k);
    for i in 0..n {
        let b = trace.beta[i];
        for (o, &g) in dt.row_mut(i).iter_mut().zip(&ds) {
            *o = b * g;
        }
    }

    // Entropy term.
    let sign = if config.entropy_sign_follows_prose { -T::one() } else { T::one() };
    for (g, &b) in dbeta.iter_mut().zip(&trace.beta) {
        if b > T::zero() {
            *g += lambda_ent * sign * (b.ln() + T::one());
        }
    }

    // β = softmax(α); α = μ + σ ε; σ = exp(½ logvar).
    let dalpha = softmax_backward(&trace.beta, &dbeta);
    let mut dhead = Matrix::zeros(n, 2);
    for i in 0..n {
        let eps = match sampling {
            Sampling::Deterministic => T::zero(),
            Sampling::Noise(noise) => noise[i],
        };
        let mu = trace.mu[i];
        let lv = trace.logvar[i];
        let dmu = dalpha[i] + lambda_kl * mu;
        let dlv = dalpha[i] * eps * half * trace.sigma[i] + lambda_kl * half * (lv.exp() - T::one());
        dhead.set(i, 0, dmu);
        dhead.set(i, 1, dlv);
    }

    // Importance network.
    let imp = &params.importance;
    let icache = &cache.importance;
    let dnorm_out = imp.head.backward(&icache.head_in, &dhead, &mut grads.importance.head);
    let mut dx = layer_norm_backward(&imp.final_norm, &icache.final_norm, &dnorm_out, &mut grads.importance.final_norm);
    for (l, block) in imp.blocks.iter().enumerate().rev() {
        dx = block_backward(block, &icache.blocks[l], config.imp_heads, &dx, &mut grads.importance.blocks[l]);
    }
    imp.input.backward(h, &dx, &mut grads.importance.input);

    // Token encoder: t_i = softmax(z_i).
    let mut dz = Matrix::zeros(n, k);
    for i in 0..n {
        let row = softmax_backward(trace.t.row(i), dt.row(i));
        dz.row_mut(i).copy_from_slice(&row);
    }
    let enc = &params.encoder;
    let mut dact = enc.output.backward(&cache.encoder.act, &dz, &mut grads.encoder.output);
    for (g, &pre) in dact.as_mut_slice().iter_mut().zip(cache.encoder.pre.as_slice()) {
        *g *= gelu_grad(pre);
    }
    enc.hidden.backward(h, &dact, &mut grads.encoder.hidden);

    Ok(grads)
}
