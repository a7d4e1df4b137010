use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DatasetSplit, Task};
use crate::agent::Agent;
use crate::nn::{score_candidates, NnError, ScoredCandidates};
use crate::text::{normalize, Utterance};

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("candidate pool is empty")]
    Empty,
    #[error("pool encodings are for model version {cached:?}, agent is version {model}")]
    Stale { cached: Option<u64>, model: u64 },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Fixed set of responses the bot can retrieve, with encodings cached per
/// model version.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CandidatePool {
    texts: Vec<String>,
    version: Option<u64>,
    encodings: Vec<Vec<f64>>,
}

impl CandidatePool {
    /// Keeps the first spelling of each target, deduplicated on its
    /// normalized form.
    pub fn from_targets<I, S>(targets: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = HashSet::new();
        let texts = targets
            .into_iter()
            .map(Into::into)
            .filter(|t: &String| !t.trim().is_empty() && seen.insert(normalize(t)))
            .collect();
        Self {
            texts,
            version: None,
            encodings: Vec::new(),
        }
    }

    pub fn from_split(split: &DatasetSplit) -> Self {
        Self::from_targets(split.records.iter().map(|r| r.target.clone()))
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    pub fn text(&self, i: usize) -> &str {
        &self.texts[i]
    }

    pub fn cached_version(&self) -> Option<u64> {
        self.version
    }

    /// Encodes every candidate unless the cache already matches `agent`.
    pub fn encode(&mut self, agent: &Agent) -> Result<(), PoolError> {
        if self.version == Some(agent.version()) && self.encodings.len() == self.texts.len() {
            return Ok(());
        }
        self.encodings = self
            .texts
            .iter()
            .map(|t| agent.encode_candidate(t, Task::Dialogue))
            .collect::<Result<_, _>>()?;
        self.version = Some(agent.version());
        Ok(())
    }

    pub fn encodings(&self, agent: &Agent) -> Result<&[Vec<f64>], PoolError> {
        if self.version != Some(agent.version()) || self.encodings.len() != self.texts.len() {
            return Err(PoolError::Stale {
                cached: self.version,
                model: agent.version(),
            });
        }
        Ok(&self.encodings)
    }

    /// Scores the whole pool against the conversation so far.
    pub fn rank(&self, agent: &Agent, turns: &[Utterance]) -> Result<ScoredCandidates, PoolError> {
        if self.texts.is_empty() {
            return Err(PoolError::Empty);
        }
        let encodings = self.encodings(agent)?;
        let ctx = agent.encode_context(turns)?;
        Ok(score_candidates(&ctx, encodings)?)
    }

    /// Highest scoring response.
    pub fn respond(&self, agent: &Agent, turns: &[Utterance]) -> Result<&str, PoolError> {
        let ranked = self.rank(agent, turns)?;
        let top = ranked.top().ok_or(PoolError::Empty)?;
        Ok(&self.texts[top])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PoolError> {
        let tmp = path.as_ref().with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PoolError> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
