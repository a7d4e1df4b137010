use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::domain::{Cursor, SyntheticDomain};
use super::user::{render_feedback, simulate_user_reply, SimUser};
use super::SimError;
use crate::data::{DatasetSplit, ExampleKind, ExtractedExample, Record, Split, Task};
use crate::selffeed::{step, ControllerConfig, ControllerError, ConversationState, Mode, Models};
use crate::text::{Speaker, Utterance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeploymentConfig {
    pub conversations: usize,
    /// Human messages per conversation.
    pub turns_per_conversation: usize,
    pub controller: ControllerConfig,
}

impl Default for DeploymentConfig {
    fn default() -> Self {
        Self {
            conversations: 100,
            turns_per_conversation: 6,
            controller: ControllerConfig::default(),
        }
    }
}

/// Everything a simulated deployment produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Deployment {
    pub transcripts: Vec<Vec<Utterance>>,
    pub examples: Vec<ExtractedExample>,
}

impl Deployment {
    pub fn count(&self, kind: ExampleKind) -> usize {
        self.examples.iter().filter(|e| e.kind == kind).count()
    }

    pub fn dataset(&self, kind: ExampleKind) -> DatasetSplit {
        let task = match kind {
            ExampleKind::HbDialogue => Task::Dialogue,
            ExampleKind::Feedback => Task::Feedback,
            ExampleKind::SatisfactionBootstrap => Task::Satisfaction,
        };
        let records = self
            .examples
            .iter()
            .filter(|e| e.kind == kind)
            .map(|e| e.to_record(Split::Train))
            .collect();
        DatasetSplit::new(task, Split::Train, records)
    }
}

/// Drives simulated users through the controller. Keeps its random state
/// between calls so collection can pause, swap models and resume.
pub struct Deployer<'a> {
    domain: &'a SyntheticDomain,
    user: SimUser,
    cfg: DeploymentConfig,
    rng: ChaCha8Rng,
    sessions: usize,
    live: Option<Live>,
    pub output: Deployment,
}

/// A conversation paused between turns.
struct Live {
    state: ConversationState,
    at: Cursor,
    prompt: Cursor,
    text: String,
    prepared: Option<String>,
    turns: usize,
}

impl<'a> Deployer<'a> {
    pub fn new(
        domain: &'a SyntheticDomain,
        user: SimUser,
        cfg: DeploymentConfig,
        seed: u64,
    ) -> Result<Self, SimError> {
        user.validate()?;
        cfg.controller.validate()?;
        if cfg.turns_per_conversation == 0 {
            return Err(SimError::InvalidConfig(
                "conversations need at least one turn".into(),
            ));
        }
        Ok(Self {
            domain,
            user,
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            sessions: 0,
            live: None,
            output: Deployment::default(),
        })
    }

    fn feedback_count(&self) -> usize {
        self.output.count(ExampleKind::Feedback)
    }

    /// Runs `cfg.conversations` conversations.
    pub fn run<M: Models + ?Sized>(&mut self, models: &M) -> Result<(), SimError> {
        for _ in 0..self.cfg.conversations {
            self.converse(models, usize::MAX)?;
        }
        Ok(())
    }

    /// Runs conversations until `target` feedback examples exist in total,
    /// stopping mid-conversation if needed.
    pub fn collect_feedback<M: Models + ?Sized>(
        &mut self,
        models: &M,
        target: usize,
    ) -> Result<(), SimError> {
        let limit = self.sessions + 100 * target.max(1) + 100;
        while self.feedback_count() < target {
            if self.sessions >= limit {
                return Err(SimError::Stalled {
                    wanted: target,
                    found: self.feedback_count(),
                });
            }
            self.converse(models, target)?;
        }
        Ok(())
    }

    fn converse<M: Models + ?Sized>(
        &mut self,
        models: &M,
        feedback_target: usize,
    ) -> Result<(), SimError> {
        let domain = self.domain;
        let mut live = match self.live.take() {
            Some(live) => live,
            None => {
                let at = domain.random_opener(&mut self.rng);
                self.sessions += 1;
                Live {
                    state: ConversationState::new(format!("sim-{}", self.sessions - 1)),
                    at,
                    prompt: at,
                    text: domain.utterance(at).to_string(),
                    prepared: None,
                    turns: 0,
                }
            }
        };
        while live.turns < self.cfg.turns_per_conversation {
            live.turns += 1;
            let out = step(&mut live.state, &live.text, models, &self.cfg.controller)?;
            self.output.examples.extend(out.extracted);
            if live.state.mode == Mode::AwaitingFeedback {
                live.text = live.prepared.take().unwrap_or_else(|| {
                    let truth = domain.utterance(Cursor {
                        chain: live.prompt.chain,
                        pos: live.prompt.pos + 1,
                    });
                    let style = self.user.pick_style(&mut self.rng);
                    render_feedback(domain, truth, style, &mut self.rng)
                });
            } else if out.satisfaction.is_none() {
                live.at = domain.random_opener(&mut self.rng);
                live.text = domain.utterance(live.at).to_string();
            } else {
                let reaction =
                    simulate_user_reply(domain, &self.user, live.at, &out.reply, &mut self.rng);
                live.prompt = live.at;
                live.at = reaction.next;
                live.prepared = reaction.feedback;
                live.text = reaction.text;
            }
            if self.feedback_count() >= feedback_target
                && live.turns < self.cfg.turns_per_conversation
            {
                self.live = Some(live);
                return Ok(());
            }
        }
        self.output.transcripts.push(live.state.transcript);
        Ok(())
    }
}

/// Runs a full deployment with a fresh seed.
pub fn run_deployment<M: Models + ?Sized>(
    models: &M,
    domain: &SyntheticDomain,
    user: SimUser,
    cfg: DeploymentConfig,
    seed: u64,
) -> Result<Deployment, SimError> {
    let mut d = Deployer::new(domain, user, cfg, seed)?;
    d.run(models)?;
    Ok(d.output)
}

/// Rating collection with a plain bot: each bot turn yields one
/// Satisfaction record over [prompt, reply, reaction].
pub fn collect_ratings<M: Models + ?Sized>(
    models: &M,
    domain: &SyntheticDomain,
    user: SimUser,
    conversations: usize,
    turns: usize,
    split: Split,
    seed: u64,
) -> Result<DatasetSplit, SimError> {
    user.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for _ in 0..conversations {
        let mut at = domain.random_opener(&mut rng);
        let mut history = vec![Utterance::human(domain.utterance(at))];
        for _ in 0..turns {
            let context = &history[history.len().saturating_sub(2)..];
            let reply = models.respond(context)?;
            let reaction = simulate_user_reply(domain, &user, at, &reply, &mut rng);
            let prompt = history.last().expect("prompt").clone();
            records.push(Record::satisfaction(
                split,
                vec![
                    prompt,
                    Utterance::bot(reply.clone()),
                    Utterance::human(reaction.text.clone()),
                ],
                reaction.rating,
            ));
            history.push(Utterance::bot(reply));
            history.push(Utterance::human(reaction.text));
            at = reaction.next;
        }
    }
    Ok(DatasetSplit::new(Task::Satisfaction, split, records))
}

/// A bot that always knows the right reply and reads complaints perfectly.
pub struct OracleBot<'a> {
    pub domain: &'a SyntheticDomain,
}

impl OracleBot<'_> {
    fn last_human<'c>(&self, context: &'c [Utterance]) -> Option<&'c str> {
        context
            .iter()
            .rev()
            .find(|u| u.speaker == Speaker::Human)
            .map(|u| u.text.as_str())
    }
}

impl Models for OracleBot<'_> {
    fn satisfaction(&self, context: &[Utterance]) -> Result<f64, ControllerError> {
        let complained = self
            .last_human(context)
            .is_some_and(|t| self.domain.is_dissatisfaction(t));
        Ok(if complained { 0.0 } else { 1.0 })
    }

    fn respond(&self, context: &[Utterance]) -> Result<String, ControllerError> {
        let prompt = self.last_human(context).unwrap_or_default();
        self.domain
            .chains
            .iter()
            .find_map(|c| {
                let i = c.utterances.iter().position(|u| u == prompt)?;
                c.utterances.get(i + 1).cloned()
            })
            .ok_or_else(|| ControllerError::Model(format!("no reply for {prompt:?}")))
    }

    fn version(&self) -> u64 {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::domain::DomainConfig;
    use crate::text::Speaker;

    struct Wrong<'a>(OracleBot<'a>);

    impl Models for Wrong<'_> {
        fn satisfaction(&self, context: &[Utterance]) -> Result<f64, ControllerError> {
            self.0.satisfaction(context)
        }
        fn respond(&self, _: &[Utterance]) -> Result<String, ControllerError> {
            Ok("no idea".into())
        }
        fn version(&self) -> u64 {
            7
        }
    }

    fn domain() -> SyntheticDomain {
        SyntheticDomain::generate(DomainConfig::default(), 5).unwrap()
    }

    #[test]
    fn oracle_bot_never_needs_feedback() {
        let d = domain();
        let out = run_deployment(
            &OracleBot { domain: &d },
            &d,
            SimUser::default(),
            DeploymentConfig::default(),
            1,
        )
        .unwrap();
        assert_eq!(out.count(ExampleKind::Feedback), 0);
        assert!(out.count(ExampleKind::HbDialogue) > 0);
        let hb = out.dataset(ExampleKind::HbDialogue);
        let inventory = d.response_inventory();
        assert!(hb.records.iter().all(|r| inventory.contains(&r.target)));
    }

    #[test]
    fn wrong_bot_collects_feedback_and_resumes() {
        let d = domain();
        let user = SimUser {
            tolerance: 1.0,
            style_mix: [1.0, 0.0, 0.0, 0.0],
            label_noise: 0.0,
        };
        let cfg = DeploymentConfig {
            conversations: 0,
            turns_per_conversation: 9,
            ..Default::default()
        };
        let wrong = Wrong(OracleBot { domain: &d });
        let mut a = Deployer::new(&d, user, cfg.clone(), 3).unwrap();
        a.collect_feedback(&wrong, 10).unwrap();
        assert_eq!(a.output.count(ExampleKind::Feedback), 10);
        let mut b = Deployer::new(&d, user, cfg, 3).unwrap();
        b.collect_feedback(&wrong, 4).unwrap();
        b.collect_feedback(&wrong, 10).unwrap();
        assert_eq!(a.output.examples, b.output.examples);

        let fb = a.output.dataset(ExampleKind::Feedback);
        for r in &fb.records {
            let prompt = r.x.last().unwrap();
            assert_eq!(prompt.speaker, Speaker::Human);
            assert!(
                d.is_on_table(&prompt.text, &r.target),
                "{:?} -> {}",
                prompt.text,
                r.target
            );
        }
    }

    #[test]
    fn ratings_cover_both_labels() {
        let d = domain();
        let bot = OracleBot { domain: &d };
        let sat = collect_ratings(&bot, &d, SimUser::default(), 5, 3, Split::Train, 0).unwrap();
        assert_eq!(sat.len(), 15);
        assert!(sat
            .records
            .iter()
            .all(|r| r.x.len() == 3 && r.label() == Some(0)));
        let sat = collect_ratings(
            &Wrong(OracleBot { domain: &d }),
            &d,
            SimUser::default(),
            20,
            3,
            Split::Train,
            0,
        )
        .unwrap();
        assert!(sat.records.iter().any(|r| r.label() == Some(1)));
        assert!(sat.records.iter().any(|r| r.rating == Some(2)));
    }
}
