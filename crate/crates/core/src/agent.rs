//! A trained model bundled with its vocabulary and history limit: the unit
//! that ranks candidates, predicts satisfaction, and gets checkpointed.

use std::path::Path;
use std::sync::Arc;

use crate::data::Task;
use crate::nn::{self, EncoderConfig, EncoderKind, ModelParams, NnError};
use crate::text::{
    truncate_history, vectorize_dialogue_target, vectorize_feedback_target, vectorize_turns,
    TextError, TokenId, Utterance, Vocabulary,
};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("checkpoint vocabulary has {vocab} tokens but the model expects {model}")]
    VocabMismatch { vocab: usize, model: usize },
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub params: ModelParams,
    pub vocab: Arc<Vocabulary>,
    pub history_limit: usize,
}

impl Agent {
    pub fn new(
        config: EncoderConfig,
        vocab: Arc<Vocabulary>,
        history_limit: usize,
        seed: u64,
    ) -> Result<Self, AgentError> {
        if history_limit == 0 {
            return Err(TextError::ZeroHistoryLimit.into());
        }
        let params = ModelParams::init(config, vocab.len(), seed)?;
        Ok(Self {
            params,
            vocab,
            history_limit,
        })
    }

    pub fn version(&self) -> u64 {
        self.params.version
    }

    pub fn context_ids(&self, turns: &[Utterance]) -> Vec<TokenId> {
        let start = turns.len().saturating_sub(self.history_limit);
        vectorize_turns(&turns[start..], &self.vocab)
    }

    pub fn target_ids(&self, text: &str, task: Task) -> Vec<TokenId> {
        match task {
            Task::Feedback => vectorize_feedback_target(text, &self.vocab),
            _ => vectorize_dialogue_target(text, &self.vocab),
        }
    }

    pub fn encode_context(&self, turns: &[Utterance]) -> Result<Vec<f64>, NnError> {
        Ok(nn::encode(&self.params, &self.context_ids(turns), EncoderKind::Context)?.vector)
    }

    pub fn encode_candidate(&self, text: &str, task: Task) -> Result<Vec<f64>, NnError> {
        Ok(nn::encode(
            &self.params,
            &self.target_ids(text, task),
            EncoderKind::Candidate,
        )?
        .vector)
    }

    /// `ŝ` for the context ending in the partner's latest turn.
    pub fn satisfaction(&self, turns: &[Utterance]) -> Result<f64, NnError> {
        let ctx = truncate_history(turns, self.history_limit).map_err(|_| NnError::EmptyInput)?;
        nn::satisfaction_score(
            &self.params,
            &crate::text::vectorize_context(&ctx, &self.vocab),
        )
    }

    pub fn score(
        &self,
        turns: &[Utterance],
        candidates: &[String],
        task: Task,
    ) -> Result<Vec<f64>, NnError> {
        let ctx = self.encode_context(turns)?;
        let encoded = candidates
            .iter()
            .map(|c| self.encode_candidate(c, task))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(nn::score_candidates(&ctx, &encoded)?.scores)
    }

    /// Writes `model.sfcb` and `vocab.txt` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), AgentError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(NnError::from)?;
        nn::write_checkpoint(&self.params, dir.join("model.sfcb"))?;
        self.vocab.save(dir.join("vocab.txt"))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>, history_limit: usize) -> Result<Self, AgentError> {
        let dir = dir.as_ref();
        let params = nn::read_checkpoint(dir.join("model.sfcb"))?;
        let vocab = Vocabulary::load(dir.join("vocab.txt"))?;
        if vocab.len() != params.vocab_size {
            return Err(AgentError::VocabMismatch {
                vocab: vocab.len(),
                model: params.vocab_size,
            });
        }
        Ok(Self {
            params,
            vocab: Arc::new(vocab),
            history_limit,
        })
    }
}
