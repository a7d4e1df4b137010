//! Transformer encoder with hand-written backward pass.
//!
//! ```text
//! ids → embedding + sinusoid → [ MHA → (+) → LN → FFN → (+) → LN ] × layers → masked mean
//! ```
//!
//! Pad positions are excluded as attention keys and from pooling, so the
//! pooled output does not depend on how much padding a sequence carries.

use super::params::{Encoder, EncoderConfig, EncoderLayer};
use super::tensor::{affine, affine_backward, dot, Tensor};
use super::NnError;
use crate::text::{TokenId, PAD};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Result of preparing a raw id sequence for the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedInput {
    pub ids: Vec<TokenId>,
    /// Set when the oldest tokens were dropped to fit `max_seq_len`.
    pub truncated: bool,
}

pub fn prepare_input(ids: &[TokenId], cfg: &EncoderConfig) -> Result<PreparedInput, NnError> {
    if ids.iter().all(|&id| id == PAD) {
        return Err(NnError::EmptyInput);
    }
    let truncated = ids.len() > cfg.max_seq_len;
    let start = ids.len().saturating_sub(cfg.max_seq_len);
    let ids = ids[start..].to_vec();
    if ids.iter().all(|&id| id == PAD) {
        return Err(NnError::EmptyInput);
    }
    Ok(PreparedInput { ids, truncated })
}

pub fn position_encoding(pos: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            let pair = (i / 2) * 2;
            let angle = pos as f64 / 10000f64.powf(pair as f64 / dim as f64);
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

struct LayerNormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

fn layer_norm(
    x: &[f64],
    n: usize,
    d: usize,
    gain: &[f64],
    bias: &[f64],
) -> (Vec<f64>, LayerNormCache) {
    let mut out = vec![0.0; n * d];
    let mut xhat = vec![0.0; n * d];
    let mut inv_std = vec![0.0; n];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let istd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std[i] = istd;
        for j in 0..d {
            let h = (row[j] - mean) * istd;
            xhat[i * d + j] = h;
            out[i * d + j] = gain[j] * h + bias[j];
        }
    }
    (out, LayerNormCache { xhat, inv_std })
}

fn layer_norm_backward(
    cache: &LayerNormCache,
    n: usize,
    d: usize,
    gain: &[f64],
    d_out: &[f64],
    d_gain: &mut [f64],
    d_bias: &mut [f64],
) -> Vec<f64> {
    let mut d_x = vec![0.0; n * d];
    let mut d_xhat = vec![0.0; d];
    for i in 0..n {
        let xhat = &cache.xhat[i * d..(i + 1) * d];
        let g = &d_out[i * d..(i + 1) * d];
        for j in 0..d {
            d_gain[j] += g[j] * xhat[j];
            d_bias[j] += g[j];
            d_xhat[j] = g[j] * gain[j];
        }
        let mean_d = d_xhat.iter().sum::<f64>() / d as f64;
        let mean_dx = dot(&d_xhat, xhat) / d as f64;
        for j in 0..d {
            d_x[i * d + j] = cache.inv_std[i] * (d_xhat[j] - mean_d - xhat[j] * mean_dx);
        }
    }
    d_x
}

struct LayerCache {
    input: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention weights, `[heads][n][n]`.
    probs: Vec<f64>,
    attended: Vec<f64>,
    ln1: LayerNormCache,
    h1: Vec<f64>,
    pre_act: Vec<f64>,
    act: Vec<f64>,
    ln2: LayerNormCache,
}

/// Forward activations kept for the backward pass.
pub struct EncoderCache {
    ids: Vec<TokenId>,
    valid: Vec<bool>,
    layers: Vec<LayerCache>,
    valid_count: usize,
}

impl EncoderCache {
    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }
}

fn layer_forward(
    layer: &EncoderLayer,
    cfg: &EncoderConfig,
    x: Vec<f64>,
    n: usize,
    valid: &[bool],
) -> (Vec<f64>, LayerCache) {
    let d = cfg.embed_dim;
    let heads = cfg.heads;
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let q = affine(&x, n, d, &layer.wq.data, d, &layer.bq.data);
    let k = affine(&x, n, d, &layer.wk.data, d, &layer.bk.data);
    let v = affine(&x, n, d, &layer.wv.data, d, &layer.bv.data);

    let mut probs = vec![0.0; heads * n * n];
    let mut attended = vec![0.0; n * d];
    for h in 0..heads {
        let off = h * hd;
        for i in 0..n {
            let qi = &q[i * d + off..i * d + off + hd];
            let row = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
            let mut max = f64::NEG_INFINITY;
            for j in 0..n {
                if valid[j] {
                    let s = dot(qi, &k[j * d + off..j * d + off + hd]) * scale;
                    row[j] = s;
                    max = max.max(s);
                }
            }
            let mut sum = 0.0;
            for j in 0..n {
                if valid[j] {
                    row[j] = (row[j] - max).exp();
                    sum += row[j];
                } else {
                    row[j] = 0.0;
                }
            }
            let out = &mut attended[i * d + off..i * d + off + hd];
            for j in 0..n {
                if valid[j] {
                    row[j] /= sum;
                    let p = row[j];
                    let vj = &v[j * d + off..j * d + off + hd];
                    for (o, &vv) in out.iter_mut().zip(vj) {
                        *o += p * vv;
                    }
                }
            }
        }
    }
    let mut r1 = affine(&attended, n, d, &layer.wo.data, d, &layer.bo.data);
    for (r, xi) in r1.iter_mut().zip(&x) {
        *r += xi;
    }
    let (h1, ln1) = layer_norm(&r1, n, d, &layer.ln1_gain.data, &layer.ln1_bias.data);

    let f = cfg.ffn_dim;
    let pre_act = affine(&h1, n, d, &layer.ffn_w1.data, f, &layer.ffn_b1.data);
    let act: Vec<f64> = pre_act.iter().map(|&z| z.max(0.0)).collect();
    let mut r2 = affine(&act, n, f, &layer.ffn_w2.data, d, &layer.ffn_b2.data);
    for (r, hi) in r2.iter_mut().zip(&h1) {
        *r += hi;
    }
    let (out, ln2) = layer_norm(&r2, n, d, &layer.ln2_gain.data, &layer.ln2_bias.data);
    let cache = LayerCache {
        input: x,
        q,
        k,
        v,
        probs,
        attended,
        ln1,
        h1,
        pre_act,
        act,
        ln2,
    };
    (out, cache)
}

fn layer_backward(
    layer: &EncoderLayer,
    cfg: &EncoderConfig,
    cache: &LayerCache,
    n: usize,
    valid: &[bool],
    d_out: &[f64],
    grads: &mut EncoderLayer,
) -> Vec<f64> {
    let d = cfg.embed_dim;
    let f = cfg.ffn_dim;
    let heads = cfg.heads;
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();

    let d_r2 = layer_norm_backward(
        &cache.ln2,
        n,
        d,
        &layer.ln2_gain.data,
        d_out,
        &mut grads.ln2_gain.data,
        &mut grads.ln2_bias.data,
    );
    let mut d_act = affine_backward(
        &cache.act,
        n,
        f,
        &layer.ffn_w2.data,
        d,
        &d_r2,
        &mut grads.ffn_w2.data,
        &mut grads.ffn_b2.data,
    );
    for (g, &z) in d_act.iter_mut().zip(&cache.pre_act) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
    let mut d_h1 = affine_backward(
        &cache.h1,
        n,
        d,
        &layer.ffn_w1.data,
        f,
        &d_act,
        &mut grads.ffn_w1.data,
        &mut grads.ffn_b1.data,
    );
    for (a, b) in d_h1.iter_mut().zip(&d_r2) {
        *a += b;
    }
    let d_r1 = layer_norm_backward(
        &cache.ln1,
        n,
        d,
        &layer.ln1_gain.data,
        &d_h1,
        &mut grads.ln1_gain.data,
        &mut grads.ln1_bias.data,
    );
    let d_attended = affine_backward(
        &cache.attended,
        n,
        d,
        &layer.wo.data,
        d,
        &d_r1,
        &mut grads.wo.data,
        &mut grads.bo.data,
    );

    let mut d_q = vec![0.0; n * d];
    let mut d_k = vec![0.0; n * d];
    let mut d_v = vec![0.0; n * d];
    let mut d_p = vec![0.0; n];
    for h in 0..heads {
        let off = h * hd;
        for i in 0..n {
            let p_row = &cache.probs[(h * n + i) * n..(h * n + i + 1) * n];
            let d_oi = &d_attended[i * d + off..i * d + off + hd];
            let mut weighted = 0.0;
            for j in 0..n {
                if !valid[j] {
                    d_p[j] = 0.0;
                    continue;
                }
                let vj = &cache.v[j * d + off..j * d + off + hd];
                d_p[j] = dot(d_oi, vj);
                weighted += p_row[j] * d_p[j];
                let d_vj = &mut d_v[j * d + off..j * d + off + hd];
                for (dv, &g) in d_vj.iter_mut().zip(d_oi) {
                    *dv += p_row[j] * g;
                }
            }
            for j in 0..n {
                if !valid[j] {
                    continue;
                }
                let d_s = p_row[j] * (d_p[j] - weighted) * scale;
                if d_s == 0.0 {
                    continue;
                }
                for t in 0..hd {
                    d_q[i * d + off + t] += d_s * cache.k[j * d + off + t];
                    d_k[j * d + off + t] += d_s * cache.q[i * d + off + t];
                }
            }
        }
    }

    let mut d_x = d_r1;
    for (w, dw, db, g) in [
        (&layer.wq, &mut grads.wq, &mut grads.bq, &d_q),
        (&layer.wk, &mut grads.wk, &mut grads.bk, &d_k),
        (&layer.wv, &mut grads.wv, &mut grads.bv, &d_v),
    ] {
        let d_in = affine_backward(
            &cache.input,
            n,
            d,
            &w.data,
            d,
            g,
            &mut dw.data,
            &mut db.data,
        );
        for (a, v) in d_x.iter_mut().zip(&d_in) {
            *a += v;
        }
    }
    d_x
}

impl Encoder {
    /// Encodes a prepared id sequence into a single pooled vector.
    pub fn forward(
        &self,
        embeddings: &Tensor,
        cfg: &EncoderConfig,
        ids: &[TokenId],
    ) -> Result<(Vec<f64>, EncoderCache), NnError> {
        let d = cfg.embed_dim;
        let n = ids.len();
        let valid: Vec<bool> = ids.iter().map(|&id| id != PAD).collect();
        let valid_count = valid.iter().filter(|&&v| v).count();
        if valid_count == 0 {
            return Err(NnError::EmptyInput);
        }
        let vocab = embeddings.shape[0];
        let mut x = vec![0.0; n * d];
        for (pos, &id) in ids.iter().enumerate() {
            let id = id as usize;
            if id >= vocab {
                return Err(NnError::TokenOutOfRange { id, vocab });
            }
            let pe = position_encoding(pos, d);
            let row = embeddings.row(id);
            for j in 0..d {
                x[pos * d + j] = row[j] + pe[j];
            }
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, cache) = layer_forward(layer, cfg, x, n, &valid);
            caches.push(cache);
            x = out;
        }
        let mut pooled = vec![0.0; d];
        for (i, _) in valid.iter().enumerate().filter(|(_, &v)| v) {
            for j in 0..d {
                pooled[j] += x[i * d + j];
            }
        }
        for p in &mut pooled {
            *p /= valid_count as f64;
        }
        Ok((
            pooled,
            EncoderCache {
                ids: ids.to_vec(),
                valid,
                layers: caches,
                valid_count,
            },
        ))
    }

    /// Accumulates parameter gradients given `d_pooled = ∂L/∂output`.
    pub fn backward(
        &self,
        cfg: &EncoderConfig,
        cache: &EncoderCache,
        d_pooled: &[f64],
        grads: &mut Encoder,
        d_embeddings: &mut Tensor,
    ) {
        let d = cfg.embed_dim;
        let n = cache.ids.len();
        let mut d_x = vec![0.0; n * d];
        let inv = 1.0 / cache.valid_count as f64;
        for i in 0..n {
            if cache.valid[i] {
                for j in 0..d {
                    d_x[i * d + j] = d_pooled[j] * inv;
                }
            }
        }
        for (l, layer) in self.layers.iter().enumerate().rev() {
            d_x = layer_backward(
                layer,
                cfg,
                &cache.layers[l],
                n,
                &cache.valid,
                &d_x,
                &mut grads.layers[l],
            );
        }
        for (pos, &id) in cache.ids.iter().enumerate() {
            if !cache.valid[pos] {
                continue;
            }
            let row = d_embeddings.row_mut(id as usize);
            for j in 0..d {
                row[j] += d_x[pos * d + j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{ModelParams, ParamGroup};

    fn toy(dim: usize) -> EncoderConfig {
        EncoderConfig {
            embed_dim: dim,
            layers: 1,
            heads: if dim % 2 == 0 { 2 } else { 1 },
            ffn_dim: 4,
            max_seq_len: 8,
        }
    }

    #[test]
    fn output_has_embed_dim_and_is_deterministic() {
        let cfg = toy(8);
        let p = ModelParams::init(cfg, 12, 3).unwrap();
        let (a, _) = p
            .ranking
            .context
            .forward(&p.ranking.embeddings, &cfg, &[5, 6, 7])
            .unwrap();
        let (b, _) = p
            .ranking
            .context
            .forward(&p.ranking.embeddings, &cfg, &[5, 6, 7])
            .unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    /// Single token, all non-embedding weights and biases zero, layer-norm
    /// gains 1. Hand computation for the 2-dim case:
    /// x = emb + pe(0) = [0.3, -0.2] + [sin 0, cos 0] = [0.3, 0.8];
    /// LN1: mean 0.55, var 0.0625, so h1 = [-0.25, 0.25] / sqrt(0.0625 + eps);
    /// LN2 of h1 (mean 0, var c²) gives h1 / sqrt(c² + eps) with c = 0.25 / sqrt(0.0625 + eps).
    #[test]
    fn single_token_zero_weights_hand_computed() {
        let cfg = EncoderConfig {
            embed_dim: 2,
            layers: 1,
            heads: 1,
            ffn_dim: 2,
            max_seq_len: 4,
        };
        let mut p = ModelParams::init(cfg, 6, 0).unwrap();
        p.ranking.context.visit_mut("", &mut |name, t| {
            if name.contains("gain") {
                t.data.fill(1.0);
            } else {
                t.data.fill(0.0);
            }
        });
        p.ranking
            .embeddings
            .row_mut(5)
            .copy_from_slice(&[0.3, -0.2]);
        let (out, _) = p
            .ranking
            .context
            .forward(&p.ranking.embeddings, &cfg, &[5])
            .unwrap();

        let c = 0.25 / (0.0625f64 + 1e-5).sqrt();
        let expected_mag = c / (c * c + 1e-5).sqrt();
        let expected = [-expected_mag, expected_mag];
        for (o, e) in out.iter().zip(expected) {
            assert!((o - e).abs() < 1e-12, "{out:?} vs {expected:?}");
        }
    }

    #[test]
    fn padding_does_not_change_encoding() {
        let cfg = toy(8);
        let p = ModelParams::init(cfg, 12, 9).unwrap();
        let emb = &p.ranking.embeddings;
        let (plain, _) = p.ranking.candidate.forward(emb, &cfg, &[5, 6, 7]).unwrap();
        let (padded, _) = p
            .ranking
            .candidate
            .forward(emb, &cfg, &[5, 6, 7, PAD, PAD])
            .unwrap();
        for (a, b) in plain.iter().zip(&padded) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_and_oversized_inputs() {
        let cfg = toy(8);
        assert!(matches!(prepare_input(&[], &cfg), Err(NnError::EmptyInput)));
        assert!(matches!(
            prepare_input(&[PAD, PAD], &cfg),
            Err(NnError::EmptyInput)
        ));
        let long: Vec<TokenId> = (5..17).collect();
        let prepared = prepare_input(&long, &cfg).unwrap();
        assert!(prepared.truncated);
        assert_eq!(prepared.ids, (9..17).collect::<Vec<_>>());
        assert!(!prepare_input(&[5, 6], &cfg).unwrap().truncated);
    }

    #[test]
    fn out_of_range_token_is_an_error() {
        let cfg = toy(8);
        let p = ModelParams::init(cfg, 6, 0).unwrap();
        assert!(matches!(
            p.ranking.context.forward(&p.ranking.embeddings, &cfg, &[9]),
            Err(NnError::TokenOutOfRange { id: 9, vocab: 6 })
        ));
    }
}
