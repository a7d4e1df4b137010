//! The trainable core: embeddings and transformer encoders, dual-encoder
//! scoring, the satisfaction head, losses with exact gradients, AdaMax and
//! the learning-rate schedule, and checkpoint I/O.

mod checkpoint;
mod encoder;
mod loss;
mod optim;
mod params;
mod score;
mod tensor;

use thiserror::Error;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_pretrained_embeddings, read_checkpoint,
    write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use encoder::{position_encoding, prepare_input, EncoderCache, PreparedInput, LAYER_NORM_EPS};
pub use loss::{classification_loss, ranking_loss, LossOutput, RankingPair};
pub use optim::{
    adamax_step, lr_at, AdaMaxConfig, OptimizerState, DEFAULT_WARMUP_FLOOR, DEFAULT_WARMUP_STEPS,
};
pub use params::{
    Encoder, EncoderConfig, EncoderLayer, ModelParams, ParamGroup, RankingGroup, SatisfactionGroup,
    EMBEDDING_INIT_LIMIT,
};
pub use score::{rank_order, score_candidates, ScoredCandidates};
pub use tensor::{log_sum_exp, sigmoid, softmax, Tensor};

use crate::text::TokenId;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("empty input")]
    EmptyInput,
    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("need in-batch negatives: ranking batch must hold at least 2 examples")]
    NeedInBatchNegatives,
    #[error("empty batch")]
    EmptyBatch,
    #[error("label {0} is not 0 or 1")]
    InvalidLabel(u8),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(String),
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    Context,
    Candidate,
    Satisfaction,
}

/// Pooled encoding plus whether the input had to be front-truncated.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub vector: Vec<f64>,
    pub truncated: bool,
}

pub fn encode(
    params: &ModelParams,
    ids: &[TokenId],
    which: EncoderKind,
) -> Result<Encoding, NnError> {
    let cfg = &params.config;
    let prepared = prepare_input(ids, cfg)?;
    let (vector, _) = match which {
        EncoderKind::Context => {
            params
                .ranking
                .context
                .forward(&params.ranking.embeddings, cfg, &prepared.ids)?
        }
        EncoderKind::Candidate => {
            params
                .ranking
                .candidate
                .forward(&params.ranking.embeddings, cfg, &prepared.ids)?
        }
        EncoderKind::Satisfaction => params.satisfaction.encoder.forward(
            &params.satisfaction.embeddings,
            cfg,
            &prepared.ids,
        )?,
    };
    Ok(Encoding {
        vector,
        truncated: prepared.truncated,
    })
}

/// Predicted satisfaction `ŝ = σ(w · enc(x) + b)`.
pub fn satisfaction_score(params: &ModelParams, context_ids: &[TokenId]) -> Result<f64, NnError> {
    let enc = encode(params, context_ids, EncoderKind::Satisfaction)?;
    let logit = tensor::dot(&enc.vector, &params.satisfaction.head_weight.data)
        + params.satisfaction.head_bias.data[0];
    Ok(sigmoid(logit))
}
