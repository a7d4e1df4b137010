//! Multi-task training: proportional task sampling, per-task loss factors,
//! AdaMax updates and early stopping on validation hits@1/20.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::Agent;
use crate::data::{DatasetSplit, Record, Task};
use crate::eval::{assign_static_candidates, hits_at, AgentScorer, EvalError, STATIC_CANDIDATES};
use crate::nn::{
    adamax_step, classification_loss, prepare_input, ranking_loss, AdaMaxConfig, ModelParams,
    NnError, ParamGroup, RankingPair,
};
use crate::text::TokenId;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no trainable examples")]
    NoData,
    #[error("{task} has {found} examples; a ranking batch needs at least 2")]
    TooSmall { task: Task, found: usize },
    #[error("batch mixes {expected} with {found}")]
    MixedBatch { expected: Task, found: Task },
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        last_good: Box<ModelParams>,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One task's training data and its loss multiplier.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub task: Task,
    pub data: Vec<Record>,
    pub loss_factor: f64,
}

impl TaskSpec {
    pub fn new(task: Task, data: Vec<Record>, loss_factor: f64) -> Self {
        let data = match task {
            Task::Satisfaction => data.into_iter().filter(|r| r.label().is_some()).collect(),
            _ => data,
        };
        Self {
            task,
            data,
            loss_factor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation gain before stopping; epochs that end
    /// inside the warmup do not count.
    pub patience: usize,
    pub seed: u64,
    pub optimizer: AdaMaxConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            max_epochs: 100,
            patience: 5,
            seed: 0,
            optimizer: AdaMaxConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub losses: BTreeMap<Task, f64>,
    pub batches: BTreeMap<Task, usize>,
    pub valid_hits1: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
    pub best_epoch: Option<usize>,
    pub best_valid_hits1: Option<f64>,
    pub stopped_early: bool,
}

impl TrainReport {
    /// One JSON object per epoch.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for e in &self.epochs {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Task index for each of `n` batches, drawn i.i.d. in proportion to `sizes`.
pub fn sample_task_sequence(
    sizes: &[usize],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>, TrainError> {
    let dist = WeightedIndex::new(sizes).map_err(|_| TrainError::NoData)?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}

fn prepared(ids: Vec<TokenId>, agent: &Agent) -> Result<Vec<TokenId>, NnError> {
    Ok(prepare_input(&ids, &agent.params.config)?.ids)
}

/// Context and target ids for ranking records; feedback targets get the
/// feedback prefix.
pub fn make_ranking_batch(
    agent: &Agent,
    records: &[Record],
    indices: &[usize],
) -> Result<Vec<RankingPair>, TrainError> {
    let Some(first) = indices.first() else {
        return Ok(Vec::new());
    };
    let task = records[*first].task;
    indices
        .iter()
        .map(|&i| {
            let r = &records[i];
            if r.task != task {
                return Err(TrainError::MixedBatch {
                    expected: task,
                    found: r.task,
                });
            }
            Ok((
                prepared(agent.context_ids(&r.x), agent)?,
                prepared(agent.target_ids(&r.target, r.task), agent)?,
            ))
        })
        .collect()
}

/// Pairs each labelled context with its satisfied indicator, the quantity
/// the head predicts.
fn make_classification_batch(
    agent: &Agent,
    records: &[Record],
    indices: &[usize],
) -> Result<Vec<(Vec<TokenId>, u8)>, TrainError> {
    indices
        .iter()
        .filter_map(|&i| records[i].label().map(|y| (i, 1 - y)))
        .map(|(i, y)| Ok((prepared(agent.context_ids(&records[i].x), agent)?, y)))
        .collect()
}

/// Cycles through a shuffled permutation, reshuffling when exhausted.
struct Cursor {
    order: Vec<usize>,
    pos: usize,
    min_batch: usize,
}

impl Cursor {
    fn new(len: usize, min_batch: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(rng);
        Self {
            order,
            pos: 0,
            min_batch,
        }
    }

    fn next(&mut self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        if self.order.len() - self.pos < self.min_batch {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let end = (self.pos + batch).min(self.order.len());
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }
}

fn diverged(epoch: usize, reason: String, last_good: &ModelParams) -> TrainError {
    TrainError::Diverged {
        epoch,
        reason,
        last_good: Box::new(last_good.clone()),
    }
}

/// Trains `agent` on `tasks` and returns the parameters with the best
/// validation hits@1/20 (or the final ones when `valid` is `None`), one
/// model version past the input.
pub fn train(
    agent: &Agent,
    tasks: &[TaskSpec],
    valid: Option<&DatasetSplit>,
    cfg: &TrainConfig,
) -> Result<(Agent, TrainReport), TrainError> {
    let tasks: Vec<&TaskSpec> = tasks.iter().filter(|t| !t.data.is_empty()).collect();
    if tasks.is_empty() {
        return Err(TrainError::NoData);
    }
    for t in &tasks {
        if t.task.is_ranking() && t.data.len() < 2 {
            return Err(TrainError::TooSmall {
                task: t.task,
                found: t.data.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let assignments = valid
        .map(|v| assign_static_candidates(v, STATIC_CANDIDATES, cfg.seed))
        .transpose()?;
    let sizes: Vec<usize> = tasks.iter().map(|t| t.data.len()).collect();
    let total: usize = sizes.iter().sum();
    let batches_per_epoch = total.div_ceil(cfg.batch_size.max(1)).max(1);
    let mut cursors: Vec<Cursor> = tasks
        .iter()
        .map(|t| {
            Cursor::new(
                t.data.len(),
                if t.task.is_ranking() { 2 } else { 1 },
                &mut rng,
            )
        })
        .collect();

    let mut current = agent.clone();
    let mut best = current.clone();
    let mut report = TrainReport::default();
    let mut since_best = 0;
    let mut lr = 0.0;
    let mut steps = 0u64;

    for epoch in 1..=cfg.max_epochs {
        let mut losses: BTreeMap<Task, (f64, usize)> = BTreeMap::new();
        for ti in sample_task_sequence(&sizes, batches_per_epoch, &mut rng)? {
            steps += 1;
            let spec = tasks[ti];
            let indices = cursors[ti].next(cfg.batch_size, &mut rng);
            let before = &current.params;
            let entry = losses.entry(spec.task).or_insert((0.0, 0));
            if spec.task.is_ranking() {
                let batch = make_ranking_batch(&current, &spec.data, &indices)?;
                let out = ranking_loss(&current.params.ranking, &current.params.config, &batch)?;
                if !out.loss.is_finite() {
                    return Err(diverged(
                        epoch,
                        format!("{} loss {}", spec.task, out.loss),
                        before,
                    ));
                }
                entry.0 += out.loss;
                entry.1 += 1;
                if spec.loss_factor != 0.0 {
                    let mut grads = out.grads;
                    grads.scale(spec.loss_factor);
                    let p = &mut current.params;
                    lr = adamax_step(&mut p.ranking, &grads, &mut p.ranking_opt, &cfg.optimizer)
                        .map_err(|e| diverged(epoch, e.to_string(), &current.params))?;
                }
            } else {
                let batch = make_classification_batch(&current, &spec.data, &indices)?;
                let out = classification_loss(
                    &current.params.satisfaction,
                    &current.params.config,
                    &batch,
                )?;
                if !out.loss.is_finite() {
                    return Err(diverged(
                        epoch,
                        format!("{} loss {}", spec.task, out.loss),
                        before,
                    ));
                }
                entry.0 += out.loss;
                entry.1 += 1;
                if spec.loss_factor != 0.0 {
                    let mut grads = out.grads;
                    grads.scale(spec.loss_factor);
                    let p = &mut current.params;
                    adamax_step(
                        &mut p.satisfaction,
                        &grads,
                        &mut p.satisfaction_opt,
                        &cfg.optimizer,
                    )
                    .map_err(|e| diverged(epoch, e.to_string(), &current.params))?;
                }
            }
        }

        let valid_hits1 = match (valid, &assignments) {
            (Some(v), Some(a)) => Some(hits_at(&AgentScorer::new(&current), v, a, 1)?),
            _ => None,
        };
        let epoch_report = EpochReport {
            epoch,
            losses: losses
                .iter()
                .map(|(t, (sum, n))| (*t, sum / *n as f64))
                .collect(),
            batches: losses.iter().map(|(t, (_, n))| (*t, *n)).collect(),
            valid_hits1,
            lr,
        };
        log::info!(
            "epoch {epoch}: losses {:?} valid hits@1 {:?}",
            epoch_report.losses,
            epoch_report.valid_hits1
        );
        report.epochs.push(epoch_report);

        match valid_hits1 {
            Some(h) if report.best_valid_hits1.is_none_or(|b| h > b) => {
                report.best_valid_hits1 = Some(h);
                report.best_epoch = Some(epoch);
                best = current.clone();
                since_best = 0;
            }
            Some(_) if steps <= cfg.optimizer.warmup_steps => {}
            Some(_) => {
                since_best += 1;
                if since_best >= cfg.patience {
                    report.stopped_early = true;
                    break;
                }
            }
            None => {
                report.best_epoch = Some(epoch);
                best = current.clone();
            }
        }
    }
    best.params.version = agent.params.version + 1;
    Ok((best, report))
}

/// Bundled per-run settings, keyed by example counts.
pub const REFERENCE_TABLE: &str = include_str!("../data/hyperparameters.tsv");

/// One row of the reference table; `None` marks an absent data source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub hh: usize,
    pub hb: Option<usize>,
    pub fb: Option<usize>,
    pub layers: usize,
    pub lr: f64,
    pub dialogue_factor: f64,
    pub feedback_factor: Option<f64>,
}

fn parse_count(cell: &str) -> Option<usize> {
    let n: usize = cell.strip_suffix('k')?.parse().ok()?;
    Some(n * 1000)
}

pub fn reference_table() -> Vec<ReferenceRow> {
    REFERENCE_TABLE
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let c: Vec<&str> = l.split('\t').collect();
            ReferenceRow {
                hh: parse_count(c[0]).expect("hh count"),
                hb: parse_count(c[1]),
                fb: parse_count(c[2]),
                layers: c[3].parse().expect("layers"),
                lr: c[4].parse().expect("lr"),
                dialogue_factor: c[5].parse().expect("factor"),
                feedback_factor: c[6].parse().ok(),
            }
        })
        .collect()
}

/// The reference row for exactly these counts, if listed.
pub fn reference_row(hh: usize, hb: Option<usize>, fb: Option<usize>) -> Option<ReferenceRow> {
    reference_table()
        .into_iter()
        .find(|r| r.hh == hh && r.hb == hb && r.fb == fb)
}
