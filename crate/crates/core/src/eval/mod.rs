//! Offline evaluation: static candidate sets, hits@k, the max-F1 sweep,
//! dissatisfaction baselines and the one-tailed t-test.

mod baselines;
mod f1;
mod stats;

use std::cell::RefCell;
use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agent::Agent;
use crate::data::{DatasetSplit, Task};
use crate::nn::{rank_order, NnError};
use crate::text::Utterance;

pub use baselines::{
    uncertainty_gap, uncertainty_top, DissatisfactionRegex, Flag, DEFAULT_PATTERNS,
};
pub use f1::{f1_at, max_f1_sweep, max_f1_with_min_precision, F1Point};
pub use stats::{mean_std, one_tailed_t_test, TTest};

/// Static evaluation set size: the gold target plus 19 negatives.
pub const STATIC_CANDIDATES: usize = 20;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need {needed} distinct targets to draw negatives, split has {found}")]
    TooFewTargets { needed: usize, found: usize },
    #[error("assignments cover {assigned} examples but the split has {examples}")]
    LengthMismatch { assigned: usize, examples: usize },
    #[error("scorer returned {found} scores for {expected} candidates")]
    ScoreCount { expected: usize, found: usize },
    #[error("need at least two samples per group for a pooled t-test")]
    TooFewSamples,
    #[error("invalid pattern {pattern:?}: {message}")]
    Pattern { pattern: String, message: String },
    #[error("no labelled examples")]
    NoLabels,
    #[error("no positive labels to sweep against")]
    NoPositives,
    #[error("need at least {0} candidates")]
    TooFewCandidates(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Pool(#[from] crate::data::PoolError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One line of a metric log.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub metric: String,
    #[serde(rename = "X")]
    pub x: usize,
    #[serde(rename = "Y")]
    pub y: usize,
    pub value: f64,
    pub n: usize,
    pub seed: u64,
    pub model_version: u64,
}

/// Candidates for one example with the gold target at `gold`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub candidates: Vec<String>,
    pub gold: usize,
}

/// For each example: its own target plus `size - 1` other distinct targets
/// of the same split, in a seeded random order.
pub fn assign_static_candidates(
    split: &DatasetSplit,
    size: usize,
    seed: u64,
) -> Result<Vec<Assignment>, EvalError> {
    let targets = split.distinct_targets();
    assign_from(split, &targets, size, seed, true)
}

/// Like [`assign_static_candidates`] but negatives come from an external
/// pool; a pool smaller than `size - 1` contributes every other entry.
pub fn assign_pool_candidates(
    split: &DatasetSplit,
    pool: &[String],
    size: usize,
    seed: u64,
) -> Result<Vec<Assignment>, EvalError> {
    let distinct: Vec<String> = pool
        .iter()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .cloned()
        .collect();
    assign_from(split, &distinct, size, seed, false)
}

fn assign_from(
    split: &DatasetSplit,
    targets: &[String],
    size: usize,
    seed: u64,
    strict: bool,
) -> Result<Vec<Assignment>, EvalError> {
    if size == 0 || (strict && targets.len() < size) {
        return Err(EvalError::TooFewTargets {
            needed: size,
            found: targets.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(split.len());
    for record in &split.records {
        let others = targets.iter().filter(|t| **t != record.target).count();
        let negatives = (size - 1).min(others);
        if strict && negatives < size - 1 {
            return Err(EvalError::TooFewTargets {
                needed: size,
                found: others + 1,
            });
        }
        let mut candidates: Vec<String> = Vec::with_capacity(negatives + 1);
        if negatives == others {
            candidates.extend(targets.iter().filter(|t| **t != record.target).cloned());
        }
        while candidates.len() < negatives {
            let pick = &targets[rng.gen_range(0..targets.len())];
            if *pick != record.target && !candidates.contains(pick) {
                candidates.push(pick.clone());
            }
        }
        candidates.shuffle(&mut rng);
        let gold = rng.gen_range(0..=candidates.len());
        candidates.insert(gold, record.target.clone());
        out.push(Assignment { candidates, gold });
    }
    Ok(out)
}

/// Anything that can score a candidate list for an example.
pub trait Scorer {
    fn score(
        &self,
        index: usize,
        x: &[Utterance],
        candidates: &[String],
        task: Task,
    ) -> Result<Vec<f64>, EvalError>;
}

/// Dual-encoder scorer that encodes each distinct candidate string once.
pub struct AgentScorer<'a> {
    agent: &'a Agent,
    cache: RefCell<HashMap<String, Vec<f64>>>,
}

impl<'a> AgentScorer<'a> {
    pub fn new(agent: &'a Agent) -> Self {
        Self {
            agent,
            cache: RefCell::new(HashMap::new()),
        }
    }
}

impl Scorer for AgentScorer<'_> {
    fn score(
        &self,
        _index: usize,
        x: &[Utterance],
        candidates: &[String],
        task: Task,
    ) -> Result<Vec<f64>, EvalError> {
        let ctx = self.agent.encode_context(x)?;
        let mut cache = self.cache.borrow_mut();
        let mut scores = Vec::with_capacity(candidates.len());
        for c in candidates {
            if !cache.contains_key(c) {
                cache.insert(c.clone(), self.agent.encode_candidate(c, task)?);
            }
            scores.push(ctx.iter().zip(&cache[c]).map(|(a, b)| a * b).sum());
        }
        Ok(scores)
    }
}

/// Independent uniform scores, reproducible per example.
pub struct RandomScorer {
    pub seed: u64,
}

impl Scorer for RandomScorer {
    fn score(
        &self,
        index: usize,
        _x: &[Utterance],
        candidates: &[String],
        _task: Task,
    ) -> Result<Vec<f64>, EvalError> {
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        Ok(candidates.iter().map(|_| rng.gen::<f64>()).collect())
    }
}

/// 1-based rank of the gold candidate for each example.
pub fn gold_ranks<S: Scorer + ?Sized>(
    scorer: &S,
    split: &DatasetSplit,
    assignments: &[Assignment],
) -> Result<Vec<usize>, EvalError> {
    if assignments.len() != split.len() {
        return Err(EvalError::LengthMismatch {
            assigned: assignments.len(),
            examples: split.len(),
        });
    }
    split
        .records
        .iter()
        .zip(assignments)
        .enumerate()
        .map(|(i, (record, a))| {
            let scores = scorer.score(i, &record.x, &a.candidates, split.task)?;
            if scores.len() != a.candidates.len() {
                return Err(EvalError::ScoreCount {
                    expected: a.candidates.len(),
                    found: scores.len(),
                });
            }
            Ok(rank_order(&scores)
                .iter()
                .position(|&j| j == a.gold)
                .unwrap_or(usize::MAX - 1)
                + 1)
        })
        .collect()
}

/// Fraction of ranks within the top `k`.
pub fn hits_from_ranks(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

pub fn hits_at<S: Scorer + ?Sized>(
    scorer: &S,
    split: &DatasetSplit,
    assignments: &[Assignment],
    k: usize,
) -> Result<f64, EvalError> {
    Ok(hits_from_ranks(&gold_ranks(scorer, split, assignments)?, k))
}

/// Scores where higher means more likely dissatisfied, with 0/1 labels
/// (1 = dissatisfied). Rating-2 records are skipped.
pub fn satisfaction_scores<F>(
    split: &DatasetSplit,
    mut score: F,
) -> Result<(Vec<f64>, Vec<u8>), EvalError>
where
    F: FnMut(&[Utterance]) -> Result<f64, EvalError>,
{
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for record in &split.records {
        if let Some(label) = record.label() {
            scores.push(score(&record.x)?);
            labels.push(label);
        }
    }
    if labels.is_empty() {
        return Err(EvalError::NoLabels);
    }
    Ok((scores, labels))
}

/// Max F1 of the satisfaction classifier, scoring `1 - ŝ`.
pub fn classifier_f1(agent: &Agent, split: &DatasetSplit) -> Result<F1Point, EvalError> {
    let (scores, labels) = satisfaction_scores(split, |x| Ok(1.0 - agent.satisfaction(x)?))?;
    max_f1_sweep(&scores, &labels)
}
