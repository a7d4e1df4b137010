use super::encoder::EncoderCache;
use super::params::{EncoderConfig, ParamGroup, RankingGroup, SatisfactionGroup};
use super::tensor::{dot, log_sum_exp, sigmoid, softmax};
use super::NnError;
use crate::text::TokenId;

/// One ranking example: context ids and target ids, both already prepared.
pub type RankingPair = (Vec<TokenId>, Vec<TokenId>);

#[derive(Debug, Clone)]
pub struct LossOutput<G> {
    pub loss: f64,
    pub grads: G,
}

/// In-batch-negatives cross entropy. Row `i` of the `B×B` score matrix
/// holds context `i` against every target in the batch; the diagonal is
/// the correct class. Loss is the mean over rows.
pub fn ranking_loss(
    group: &RankingGroup,
    cfg: &EncoderConfig,
    batch: &[RankingPair],
) -> Result<LossOutput<RankingGroup>, NnError> {
    let b = batch.len();
    if b < 2 {
        return Err(NnError::NeedInBatchNegatives);
    }
    let mut ctx_vecs = Vec::with_capacity(b);
    let mut ctx_caches: Vec<EncoderCache> = Vec::with_capacity(b);
    let mut tgt_vecs = Vec::with_capacity(b);
    let mut tgt_caches: Vec<EncoderCache> = Vec::with_capacity(b);
    for (ctx, tgt) in batch {
        let (v, c) = group.context.forward(&group.embeddings, cfg, ctx)?;
        ctx_vecs.push(v);
        ctx_caches.push(c);
        let (v, c) = group.candidate.forward(&group.embeddings, cfg, tgt)?;
        tgt_vecs.push(v);
        tgt_caches.push(c);
    }

    let d = cfg.embed_dim;
    let mut loss = 0.0;
    let mut d_ctx = vec![vec![0.0; d]; b];
    let mut d_tgt = vec![vec![0.0; d]; b];
    let inv_b = 1.0 / b as f64;
    for i in 0..b {
        let scores: Vec<f64> = tgt_vecs.iter().map(|t| dot(&ctx_vecs[i], t)).collect();
        loss += log_sum_exp(&scores) - scores[i];
        let mut probs = softmax(&scores);
        probs[i] -= 1.0;
        for (j, g) in probs.iter().enumerate() {
            let g = g * inv_b;
            for k in 0..d {
                d_ctx[i][k] += g * tgt_vecs[j][k];
                d_tgt[j][k] += g * ctx_vecs[i][k];
            }
        }
    }
    loss *= inv_b;

    let mut grads = group.zeros_like();
    for i in 0..b {
        group.context.backward(
            cfg,
            &ctx_caches[i],
            &d_ctx[i],
            &mut grads.context,
            &mut grads.embeddings,
        );
        group.candidate.backward(
            cfg,
            &tgt_caches[i],
            &d_tgt[i],
            &mut grads.candidate,
            &mut grads.embeddings,
        );
    }
    Ok(LossOutput { loss, grads })
}

/// Mean binary cross entropy of the satisfaction head against 0/1 labels.
pub fn classification_loss(
    group: &SatisfactionGroup,
    cfg: &EncoderConfig,
    batch: &[(Vec<TokenId>, u8)],
) -> Result<LossOutput<SatisfactionGroup>, NnError> {
    if batch.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    if let Some((_, bad)) = batch.iter().find(|(_, y)| *y > 1) {
        return Err(NnError::InvalidLabel(*bad));
    }
    let inv_n = 1.0 / batch.len() as f64;
    let mut grads = group.zeros_like();
    let mut loss = 0.0;
    for (ids, label) in batch {
        let (enc, cache) = group.encoder.forward(&group.embeddings, cfg, ids)?;
        let logit = dot(&enc, &group.head_weight.data) + group.head_bias.data[0];
        let y = *label as f64;
        // log(1 + e^z) - y z, written to stay finite for large |z|
        loss += logit.max(0.0) - y * logit + (-logit.abs()).exp().ln_1p();
        let d_logit = (sigmoid(logit) - y) * inv_n;
        grads.head_bias.data[0] += d_logit;
        let mut d_enc = vec![0.0; cfg.embed_dim];
        for k in 0..cfg.embed_dim {
            grads.head_weight.data[k] += d_logit * enc[k];
            d_enc[k] = d_logit * group.head_weight.data[k];
        }
        group.encoder.backward(
            cfg,
            &cache,
            &d_enc,
            &mut grads.encoder,
            &mut grads.embeddings,
        );
    }
    Ok(LossOutput {
        loss: loss * inv_n,
        grads,
    })
}
