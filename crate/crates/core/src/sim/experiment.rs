use std::fmt::Write as _;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::deploy::{collect_ratings, Deployer, DeploymentConfig};
use super::domain::{DomainConfig, SyntheticDomain};
use super::user::SimUser;
use super::SimError;
use crate::agent::Agent;
use crate::data::{CandidatePool, DatasetSplit, ExampleKind, Record, Split, Task};
use crate::eval::{
    assign_static_candidates, classifier_f1, hits_at, max_f1_sweep, mean_std, one_tailed_t_test,
    satisfaction_scores, uncertainty_gap, uncertainty_top, AgentScorer, DissatisfactionRegex,
    TTest, STATIC_CANDIDATES,
};
use crate::nn::{AdaMaxConfig, EncoderConfig};
use crate::selffeed::DeployedModel;
use crate::text::{Utterance, Vocabulary};
use crate::train::{train, TaskSpec, TrainConfig, TrainReport};

/// Everything that defines one simulated world and how models are fit in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub domain: DomainConfig,
    pub hh_train: usize,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    /// Epochs for fitting the satisfaction head on the rating set.
    pub satisfaction_epochs: usize,
    pub user: SimUser,
    pub rating_conversations: usize,
    pub rating_turns: usize,
    pub deployment: DeploymentConfig,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            domain: DomainConfig {
                words: 60,
                ..DomainConfig::default()
            },
            hh_train: 200,
            encoder: EncoderConfig {
                embed_dim: 32,
                layers: 1,
                heads: 2,
                ffn_dim: 32,
                max_seq_len: 64,
            },
            train: TrainConfig {
                batch_size: 32,
                max_epochs: 100,
                patience: 20,
                seed: 0,
                optimizer: AdaMaxConfig {
                    base_lr: 0.02,
                    warmup_steps: 100,
                    ..AdaMaxConfig::default()
                },
            },
            satisfaction_epochs: 15,
            user: SimUser::default(),
            rating_conversations: 60,
            rating_turns: 5,
            deployment: DeploymentConfig::default(),
        }
    }
}

/// A generated domain with its fixed splits.
#[derive(Debug, Clone)]
pub struct World {
    pub seed: u64,
    pub domain: SyntheticDomain,
    pub vocab: Arc<Vocabulary>,
    pub hh: DatasetSplit,
    pub valid: DatasetSplit,
    pub test: DatasetSplit,
    pub pool: CandidatePool,
}

impl World {
    pub fn build(cfg: &WorldConfig, seed: u64) -> Result<Self, SimError> {
        let domain = SyntheticDomain::generate(cfg.domain, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
        let hh = domain.sample_hh(cfg.hh_train, &mut rng);
        let valid = domain.dialogue_split(Split::Valid);
        let test = domain.dialogue_split(Split::Test);
        let vocab = Arc::new(Vocabulary::build(domain.corpus()));
        let pool = CandidatePool::from_targets(domain.response_inventory());
        Ok(Self {
            seed,
            domain,
            vocab,
            hh,
            valid,
            test,
            pool,
        })
    }

    /// Fits a fresh agent on `tasks`, early-stopping on the valid split.
    pub fn fit(
        &self,
        cfg: &WorldConfig,
        tasks: &[TaskSpec],
        seed: u64,
    ) -> Result<(Agent, TrainReport), SimError> {
        let agent = Agent::new(
            cfg.encoder,
            self.vocab.clone(),
            cfg.deployment.controller.history_limit,
            seed,
        )?;
        let tasks: Vec<TaskSpec> = tasks
            .iter()
            .filter(|t| !t.task.is_ranking() || t.data.len() >= 2)
            .cloned()
            .collect();
        let train_cfg = TrainConfig { seed, ..cfg.train };
        Ok(train(&agent, &tasks, Some(&self.valid), &train_cfg)?)
    }

    /// Test hits@1 out of 20 static candidates.
    pub fn test_hits(&self, agent: &Agent) -> Result<f64, SimError> {
        let assignment = assign_static_candidates(&self.test, STATIC_CANDIDATES, self.seed)?;
        Ok(hits_at(
            &AgentScorer::new(agent),
            &self.test,
            &assignment,
            1,
        )?)
    }

    /// Trains only the satisfaction head of `agent` on `ratings`.
    pub fn fit_satisfaction(
        &self,
        cfg: &WorldConfig,
        agent: &Agent,
        ratings: &DatasetSplit,
        seed: u64,
    ) -> Result<Agent, SimError> {
        let train_cfg = TrainConfig {
            seed,
            max_epochs: cfg.satisfaction_epochs,
            ..cfg.train
        };
        let tasks = [TaskSpec::new(
            Task::Satisfaction,
            ratings.records.clone(),
            1.0,
        )];
        Ok(train(agent, &tasks, None, &train_cfg)?.0)
    }

    /// The initial bot: a dialogue model on HH data plus a satisfaction head
    /// fit on ratings collected with it. Returns the rating set as well.
    pub fn bootstrap(
        &self,
        cfg: &WorldConfig,
        seed: u64,
    ) -> Result<(DeployedModel, DatasetSplit), SimError> {
        let hh = [TaskSpec::new(Task::Dialogue, self.hh.records.clone(), 1.0)];
        let (dialogue, _) = self.fit(cfg, &hh, seed)?;
        let plain = DeployedModel::new(dialogue, self.pool.clone())?;
        let ratings = collect_ratings(
            &plain,
            &self.domain,
            cfg.user,
            cfg.rating_conversations,
            cfg.rating_turns,
            Split::Train,
            seed ^ 0xA7,
        )?;
        let agent = self.fit_satisfaction(cfg, &plain.agent, &ratings, seed)?;
        Ok((DeployedModel::new(agent, self.pool.clone())?, ratings))
    }
}

/// One training mix in a learning-curve comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub name: String,
    pub hb: bool,
    pub fb: bool,
    pub feedback_factor: f64,
}

impl Arm {
    pub fn new(name: &str, hb: bool, fb: bool) -> Self {
        Self {
            name: name.to_string(),
            hb,
            fb,
            feedback_factor: 1.0,
        }
    }

    pub fn standard() -> Vec<Arm> {
        vec![
            Arm::new("HH", false, false),
            Arm::new("HH+HB", true, false),
            Arm::new("HH+FB", false, true),
            Arm::new("HH+HB+FB", true, true),
        ]
    }

    fn tasks(&self, hh: &DatasetSplit, hb: &DatasetSplit, fb: &DatasetSplit) -> Vec<TaskSpec> {
        let mut dialogue: Vec<Record> = hh.records.clone();
        if self.hb {
            dialogue.extend(hb.records.iter().cloned());
        }
        let mut tasks = vec![TaskSpec::new(Task::Dialogue, dialogue, 1.0)];
        if self.fb {
            tasks.push(TaskSpec::new(
                Task::Feedback,
                fb.records.clone(),
                self.feedback_factor,
            ));
        }
        tasks
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub name: String,
    pub seeds: Vec<u64>,
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// One-tailed test of this arm exceeding the first arm.
    pub vs_first: Option<TTest>,
}

/// Example counts harvested in one world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldStats {
    pub seed: u64,
    pub hh: usize,
    pub hb: usize,
    pub fb: usize,
    pub initial_hits1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub metric: String,
    pub arms: Vec<ArmResult>,
    pub worlds: Vec<WorldStats>,
}

impl ExperimentReport {
    fn new(
        metric: &str,
        names: &[String],
        runs: Vec<Vec<(u64, f64)>>,
        worlds: Vec<WorldStats>,
    ) -> Result<Self, SimError> {
        let mut arms: Vec<ArmResult> = Vec::new();
        for (i, name) in names.iter().enumerate() {
            let seeds = runs.iter().map(|r| r[i].0).collect();
            let values: Vec<f64> = runs.iter().map(|r| r[i].1).collect();
            let (mean, std) = mean_std(&values);
            let vs_first = match arms.first() {
                Some(first) if values.len() >= 2 => {
                    Some(one_tailed_t_test(&first.values, &values)?)
                }
                _ => None,
            };
            arms.push(ArmResult {
                name: name.clone(),
                seeds,
                values,
                mean,
                std,
                vs_first,
            });
        }
        Ok(Self {
            metric: metric.to_string(),
            arms,
            worlds,
        })
    }

    pub fn arm(&self, name: &str) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.name == name)
    }

    /// Plain-text summary, one row per arm.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<12} {:>8} {:>8} {:>8}  {}\n",
            "arm", "mean", "std", "p", self.metric
        );
        for a in &self.arms {
            let p = a
                .vs_first
                .map_or("-".to_string(), |t| format!("{:.4}", t.p));
            let values: Vec<String> = a.values.iter().map(|v| format!("{v:.3}")).collect();
            let _ = writeln!(
                out,
                "{:<12} {:>8.4} {:>8.4} {:>8}  {}",
                a.name,
                a.mean,
                a.std,
                p,
                values.join(" ")
            );
        }
        if !self.worlds.is_empty() {
            let n = self.worlds.len() as f64;
            let avg = |f: fn(&WorldStats) -> f64| self.worlds.iter().map(f).sum::<f64>() / n;
            let _ = writeln!(
                out,
                "examples per world: HH {:.0}, HB {:.1}, FB {:.1}; initial hits@1 {:.4}",
                avg(|w| w.hh as f64),
                avg(|w| w.hb as f64),
                avg(|w| w.fb as f64),
                avg(|w| w.initial_hits1)
            );
        }
        out
    }
}

fn arm_seed(base: u64, arm: usize, run: usize) -> u64 {
    base.wrapping_add(1_000_003 * (arm as u64 + 1))
        .wrapping_add(run as u64)
}

/// Per world: bootstrap a bot, deploy it, then fit each arm's mix with its
/// own seed and score it on the test split.
pub fn learning_curve_experiment(
    cfg: &WorldConfig,
    arms: &[Arm],
    runs: usize,
    base_seed: u64,
) -> Result<ExperimentReport, SimError> {
    let mut results = Vec::with_capacity(runs);
    let mut worlds = Vec::with_capacity(runs);
    for run in 0..runs {
        let seed = base_seed.wrapping_add(run as u64);
        let world = World::build(cfg, seed)?;
        let (bot, _) = world.bootstrap(cfg, seed)?;
        let mut deployer =
            Deployer::new(&world.domain, cfg.user, cfg.deployment.clone(), seed ^ 0xD3)?;
        deployer.run(&bot)?;
        let hb = deployer.output.dataset(ExampleKind::HbDialogue);
        let fb = deployer.output.dataset(ExampleKind::Feedback);
        worlds.push(WorldStats {
            seed,
            hh: world.hh.len(),
            hb: hb.len(),
            fb: fb.len(),
            initial_hits1: world.test_hits(&bot.agent)?,
        });
        let mut row = Vec::with_capacity(arms.len());
        for (i, arm) in arms.iter().enumerate() {
            let s = arm_seed(base_seed, i, run);
            let (agent, _) = world.fit(cfg, &arm.tasks(&world.hh, &hb, &fb), s)?;
            let hits = world.test_hits(&agent)?;
            log::info!("world {seed} arm {}: hits@1 {hits:.4}", arm.name);
            row.push((s, hits));
        }
        results.push(row);
    }
    let names: Vec<String> = arms.iter().map(|a| a.name.clone()).collect();
    ExperimentReport::new("hits@1/20", &names, results, worlds)
}

/// Compares `feedback` examples gathered by one frozen bot ("stale") with
/// the same number gathered half by that bot and half by a bot retrained on
/// the first half ("fresh"). Both arms share the world, the user stream and
/// the final training seed; with `retrain` off they are the same procedure.
pub fn freshness_experiment(
    cfg: &WorldConfig,
    feedback: usize,
    runs: usize,
    base_seed: u64,
    retrain: bool,
) -> Result<ExperimentReport, SimError> {
    let mut results = Vec::with_capacity(runs);
    let mut worlds = Vec::with_capacity(runs);
    let half = feedback / 2;
    for run in 0..runs {
        let seed = base_seed.wrapping_add(run as u64);
        let world = World::build(cfg, seed)?;
        let (bot, _) = world.bootstrap(cfg, seed)?;
        let final_seed = arm_seed(base_seed, 0, run);
        let final_fit = |fb: &DatasetSplit| -> Result<f64, SimError> {
            let tasks = [
                TaskSpec::new(Task::Dialogue, world.hh.records.clone(), 1.0),
                TaskSpec::new(Task::Feedback, fb.records.clone(), 1.0),
            ];
            let (agent, _) = world.fit(cfg, &tasks, final_seed)?;
            world.test_hits(&agent)
        };

        let mut stale =
            Deployer::new(&world.domain, cfg.user, cfg.deployment.clone(), seed ^ 0xF5)?;
        stale.collect_feedback(&bot, feedback)?;
        let stale_fb = stale.output.dataset(ExampleKind::Feedback);

        let mut fresh =
            Deployer::new(&world.domain, cfg.user, cfg.deployment.clone(), seed ^ 0xF5)?;
        fresh.collect_feedback(&bot, half)?;
        if retrain {
            let tasks = [
                TaskSpec::new(Task::Dialogue, world.hh.records.clone(), 1.0),
                TaskSpec::new(
                    Task::Feedback,
                    fresh.output.dataset(ExampleKind::Feedback).records,
                    1.0,
                ),
            ];
            let (mut agent, _) = world.fit(cfg, &tasks, seed ^ 0x0E)?;
            agent.params.satisfaction = bot.agent.params.satisfaction.clone();
            agent.params.satisfaction_opt = bot.agent.params.satisfaction_opt.clone();
            let retrained = DeployedModel::new(agent, world.pool.clone())?;
            fresh.collect_feedback(&retrained, feedback)?;
        } else {
            fresh.collect_feedback(&bot, feedback)?;
        }
        let fresh_fb = fresh.output.dataset(ExampleKind::Feedback);

        worlds.push(WorldStats {
            seed,
            hh: world.hh.len(),
            hb: 0,
            fb: feedback,
            initial_hits1: world.test_hits(&bot.agent)?,
        });
        let a = final_fit(&stale_fb)?;
        let b = if retrain || stale_fb != fresh_fb {
            final_fit(&fresh_fb)?
        } else {
            a
        };
        log::info!("world {seed}: stale {a:.4} fresh {b:.4}");
        results.push(vec![(final_seed, a), (final_seed, b)]);
    }
    ExperimentReport::new(
        "hits@1/20",
        &["stale".into(), "fresh".into()],
        results,
        worlds,
    )
}

/// Max-F1 of each dissatisfaction detector on held-out rated turns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorScores {
    pub seed: u64,
    /// Fraction of labelled test turns that were dissatisfied.
    pub positive_rate: f64,
    pub classifier: f64,
    pub regex: f64,
    pub uncertainty_top: f64,
    pub uncertainty_gap: f64,
}

/// Rates the turns of a bot fit on every train-world transition, so that
/// satisfied and dissatisfied turns are both common. The satisfaction head
/// is fit on one user stream and every detector is scored on another.
pub fn detector_experiment(cfg: &WorldConfig, seed: u64) -> Result<DetectorScores, SimError> {
    let world = World::build(cfg, seed)?;
    let all = world.domain.dialogue_split(Split::Train);
    let (dialogue, _) = world.fit(
        cfg,
        &[TaskSpec::new(Task::Dialogue, all.records, 1.0)],
        seed,
    )?;
    let plain = DeployedModel::new(dialogue, world.pool.clone())?;
    let rate = |split, salt| {
        collect_ratings(
            &plain,
            &world.domain,
            cfg.user,
            cfg.rating_conversations,
            cfg.rating_turns,
            split,
            seed ^ salt,
        )
    };
    let ratings = rate(Split::Train, 0xA7)?;
    let test = rate(Split::Test, 0x7E57)?;
    let agent = world.fit_satisfaction(cfg, &plain.agent, &ratings, seed)?;
    let bot = DeployedModel::new(agent, world.pool.clone())?;
    let classifier = classifier_f1(&bot.agent, &test)?.f1;
    let labelled: Vec<u8> = test.records.iter().filter_map(|r| r.label()).collect();
    let positive_rate =
        labelled.iter().map(|&y| y as f64).sum::<f64>() / labelled.len().max(1) as f64;
    let regex = DissatisfactionRegex::default();
    let (scores, labels) = satisfaction_scores(&test, |x| {
        Ok(if regex.is_dissatisfied(&x[x.len() - 1].text) {
            1.0
        } else {
            0.0
        })
    })?;
    let regex_f1 = max_f1_sweep(&scores, &labels)?.f1;
    let pool_scores = |x: &[Utterance]| -> Result<Vec<f64>, crate::eval::EvalError> {
        Ok(bot.pool.rank(&bot.agent, &x[..1])?.scores)
    };
    let (top, labels) =
        satisfaction_scores(&test, |x| Ok(uncertainty_top(&pool_scores(x)?, 0.5)?.score))?;
    let top_f1 = max_f1_sweep(&top, &labels)?.f1;
    let (gap, labels) =
        satisfaction_scores(&test, |x| Ok(uncertainty_gap(&pool_scores(x)?, 0.5)?.score))?;
    let gap_f1 = max_f1_sweep(&gap, &labels)?.f1;
    Ok(DetectorScores {
        seed,
        positive_rate,
        classifier,
        regex: regex_f1,
        uncertainty_top: top_f1,
        uncertainty_gap: gap_f1,
    })
}
