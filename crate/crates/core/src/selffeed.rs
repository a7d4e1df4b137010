//! The deployment controller: per-turn satisfaction gating, feedback
//! requests, example extraction and the retraining trigger.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::Agent;
use crate::data::{CandidatePool, Counters, ExampleKind, ExtractedExample};
use crate::text::{Speaker, Utterance};

pub const FEEDBACK_QUESTION: &str = "oops! sorry. what should i have said instead?";
pub const ACK_AND_TOPIC: &str =
    "thanks! i'll remember that. can you pick a new topic for us to talk about now?";

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("empty utterance")]
    EmptyUtterance,
    #[error("no saved context for pending feedback")]
    MissingSavedContext,
    #[error("model unavailable: {0}")]
    Model(String),
    #[error("invalid controller config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub feedback_question: String,
    pub ack_and_topic: String,
    /// HB extraction keeps a turn only when `ŝ > t_dialogue`.
    pub t_dialogue: f64,
    /// Feedback is requested when `ŝ <= t_feedback`.
    pub t_feedback: f64,
    pub include_bot_targets: bool,
    /// When false, HB examples are kept regardless of `ŝ`.
    pub filter_hb: bool,
    pub retrain_every: usize,
    pub history_limit: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            feedback_question: FEEDBACK_QUESTION.to_string(),
            ack_and_topic: ACK_AND_TOPIC.to_string(),
            t_dialogue: 0.5,
            t_feedback: 0.5,
            include_bot_targets: false,
            filter_hb: true,
            retrain_every: 1000,
            history_limit: crate::text::DEFAULT_HISTORY_LIMIT,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let bad = |m: &str| Err(ControllerError::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.t_dialogue) || !(0.0..=1.0).contains(&self.t_feedback) {
            return bad("thresholds must lie in [0, 1]");
        }
        if self.retrain_every == 0 {
            return bad("retrain_every must be at least 1");
        }
        if self.history_limit == 0 {
            return bad("history_limit must be at least 1");
        }
        if self.feedback_question.trim().is_empty() || self.ack_and_topic.trim().is_empty() {
            return bad("bot strings must be non-empty");
        }
        Ok(())
    }
}

pub fn should_request_feedback(s_hat: f64, t: f64) -> bool {
    s_hat <= t
}

/// Keep an HB candidate only when its target turn looked satisfied.
pub fn filter_hb(s_hat: f64, t: f64) -> bool {
    s_hat > t
}

pub fn retrain_due(since_retrain: &Counters, cfg: &ControllerConfig) -> bool {
    since_retrain.extracted() >= cfg.retrain_every
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Normal,
    AwaitingFeedback,
}

/// What the controller needs from the deployed models.
pub trait Models {
    /// `ŝ` for a context ending in the human's latest turn.
    fn satisfaction(&self, context: &[Utterance]) -> Result<f64, ControllerError>;
    fn respond(&self, context: &[Utterance]) -> Result<String, ControllerError>;
    fn version(&self) -> u64;
}

/// A trained agent serving replies from an encoded pool.
#[derive(Debug, Clone)]
pub struct DeployedModel {
    pub agent: Agent,
    pub pool: CandidatePool,
}

impl DeployedModel {
    pub fn new(agent: Agent, mut pool: CandidatePool) -> Result<Self, ControllerError> {
        pool.encode(&agent)
            .map_err(|e| ControllerError::Model(e.to_string()))?;
        Ok(Self { agent, pool })
    }
}

impl Models for DeployedModel {
    fn satisfaction(&self, context: &[Utterance]) -> Result<f64, ControllerError> {
        self.agent
            .satisfaction(context)
            .map_err(|e| ControllerError::Model(e.to_string()))
    }

    fn respond(&self, context: &[Utterance]) -> Result<String, ControllerError> {
        self.pool
            .respond(&self.agent, context)
            .map(str::to_string)
            .map_err(|e| ControllerError::Model(e.to_string()))
    }

    fn version(&self) -> u64 {
        self.agent.version()
    }
}

/// One live conversation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationState {
    pub session: String,
    /// Every turn including system prompts; never truncated.
    pub transcript: Vec<Utterance>,
    /// Turns the model sees; cleared after each feedback exchange.
    pub history: Vec<Utterance>,
    pub mode: Mode,
    pub saved_context: Option<Vec<Utterance>>,
    pub hb_extracted: usize,
    pub feedback_extracted: usize,
}

impl ConversationState {
    pub fn new(session: impl Into<String>) -> Self {
        Self {
            session: session.into(),
            transcript: Vec::new(),
            history: Vec::new(),
            mode: Mode::Normal,
            saved_context: None,
            hb_extracted: 0,
            feedback_extracted: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reply: String,
    pub mode: Mode,
    /// `ŝ` of the human's turn, absent for feedback answers.
    pub satisfaction: Option<f64>,
    pub extracted: Vec<ExtractedExample>,
}

fn last_turns(turns: &[Utterance], limit: usize) -> Vec<Utterance> {
    turns[turns.len().saturating_sub(limit)..].to_vec()
}

fn example(
    kind: ExampleKind,
    x: Vec<Utterance>,
    target: String,
    state: &ConversationState,
    version: u64,
) -> ExtractedExample {
    ExtractedExample {
        kind,
        x,
        target,
        rating: None,
        model_version: version,
        session: state.session.clone(),
        turn_index: state.transcript.len() - 1,
        ts: 0,
    }
}

/// Builds the feedback example from the saved context and the verbatim reply.
pub fn extract_feedback_example(
    state: &ConversationState,
    feedback: &str,
    version: u64,
) -> Result<Option<ExtractedExample>, ControllerError> {
    let x = state
        .saved_context
        .clone()
        .ok_or(ControllerError::MissingSavedContext)?;
    if feedback.trim().is_empty() || x.is_empty() {
        return Ok(None);
    }
    Ok(Some(example(
        ExampleKind::Feedback,
        x,
        feedback.to_string(),
        state,
        version,
    )))
}

/// Handles one human message and returns the bot's turn.
pub fn step<M: Models + ?Sized>(
    state: &mut ConversationState,
    text: &str,
    models: &M,
    cfg: &ControllerConfig,
) -> Result<StepOutcome, ControllerError> {
    let version = models.version();
    if state.mode == Mode::AwaitingFeedback {
        let mut extracted = Vec::new();
        if !text.trim().is_empty() {
            state.transcript.push(Utterance::human(text));
            if let Some(ex) = extract_feedback_example(state, text, version)? {
                extracted.push(ex);
                state.feedback_extracted += 1;
            }
        }
        state.saved_context = None;
        state.history.clear();
        state.mode = Mode::Normal;
        state
            .transcript
            .push(Utterance::system(cfg.ack_and_topic.clone()));
        return Ok(StepOutcome {
            reply: cfg.ack_and_topic.clone(),
            mode: Mode::Normal,
            satisfaction: None,
            extracted,
        });
    }

    let human =
        Utterance::new(Speaker::Human, text).map_err(|_| ControllerError::EmptyUtterance)?;
    let mut history = state.history.clone();
    history.push(human.clone());
    let s_hat = models.satisfaction(&last_turns(&history, cfg.history_limit))?;
    let follows_bot = history.len() >= 2 && history[history.len() - 2].speaker == Speaker::Bot;

    let mut extracted = Vec::new();
    let mut pending = Vec::new();
    let keep = !cfg.filter_hb || filter_hb(s_hat, cfg.t_dialogue);
    if follows_bot && keep {
        let before = &history[..history.len() - 1];
        pending.push((
            ExampleKind::HbDialogue,
            last_turns(before, cfg.history_limit),
            text.to_string(),
        ));
        if cfg.include_bot_targets && before.len() >= 2 {
            let bot = &before[before.len() - 1];
            pending.push((
                ExampleKind::HbDialogue,
                last_turns(&before[..before.len() - 1], cfg.history_limit),
                bot.text.clone(),
            ));
        }
    }

    let ask = follows_bot && history.len() >= 3 && should_request_feedback(s_hat, cfg.t_feedback);
    let reply = if ask {
        cfg.feedback_question.clone()
    } else {
        models.respond(&last_turns(&history, cfg.history_limit))?
    };

    state.transcript.push(human);
    for (kind, x, target) in pending {
        extracted.push(example(kind, x, target, state, version));
        state.hb_extracted += 1;
    }
    if ask {
        state.saved_context = Some(last_turns(&history[..history.len() - 2], cfg.history_limit));
        state.mode = Mode::AwaitingFeedback;
        state.transcript.push(Utterance::system(reply.clone()));
    } else {
        history.push(Utterance::bot(reply.clone()));
        state.transcript.push(Utterance::bot(reply.clone()));
    }
    state.history = history;
    Ok(StepOutcome {
        reply,
        mode: state.mode,
        satisfaction: Some(s_hat),
        extracted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::RefCell;

    /// Replays fixed satisfaction scores and replies.
    struct Scripted {
        scores: RefCell<Vec<f64>>,
        replies: RefCell<Vec<&'static str>>,
    }

    impl Scripted {
        fn new(scores: &[f64], replies: &[&'static str]) -> Self {
            Self {
                scores: RefCell::new(scores.iter().rev().copied().collect()),
                replies: RefCell::new(replies.iter().rev().copied().collect()),
            }
        }
    }

    impl Models for Scripted {
        fn satisfaction(&self, _: &[Utterance]) -> Result<f64, ControllerError> {
            self.scores
                .borrow_mut()
                .pop()
                .ok_or(ControllerError::Model("out of scores".into()))
        }
        fn respond(&self, _: &[Utterance]) -> Result<String, ControllerError> {
            Ok(self.replies.borrow_mut().pop().expect("reply").to_string())
        }
        fn version(&self) -> u64 {
            3
        }
    }

    #[test]
    fn tie_counts_as_dissatisfied() {
        assert!(should_request_feedback(0.4, 0.5));
        assert!(!should_request_feedback(0.6, 0.5));
        assert!(should_request_feedback(0.5, 0.5));
        assert!(filter_hb(0.9, 0.5));
        assert!(!filter_hb(0.3, 0.5));
    }

    #[test]
    fn retrain_trigger() {
        let cfg = ControllerConfig {
            retrain_every: 100,
            ..ControllerConfig::default()
        };
        let mut c = Counters::default();
        c.hb_dialogue = 60;
        c.feedback = 40;
        assert!(retrain_due(&c, &cfg));
        c.feedback = 39;
        assert!(!retrain_due(&c, &cfg));
        assert!(!retrain_due(&Counters::default(), &cfg));
    }

    #[test]
    fn first_turn_extracts_nothing() {
        let mut s = ConversationState::new("a");
        let m = Scripted::new(&[0.9], &["hello my name is ray"]);
        let out = step(&mut s, "hi", &m, &ControllerConfig::default()).unwrap();
        assert!(out.extracted.is_empty());
        assert_eq!(out.reply, "hello my name is ray");
    }

    #[test]
    fn satisfied_reply_after_bot_turn_is_hb() {
        let mut s = ConversationState::new("a");
        let m = Scripted::new(&[0.9, 0.8], &["hello my name is ray", "nice to meet you"]);
        let cfg = ControllerConfig::default();
        step(&mut s, "hey", &m, &cfg).unwrap();
        let out = step(&mut s, "hi i'm leah", &m, &cfg).unwrap();
        assert_eq!(out.extracted.len(), 1);
        let ex = &out.extracted[0];
        assert_eq!(ex.kind, ExampleKind::HbDialogue);
        assert_eq!(ex.target, "hi i'm leah");
        assert_eq!(
            ex.x,
            vec![
                Utterance::human("hey"),
                Utterance::bot("hello my name is ray")
            ]
        );
        assert_eq!(ex.model_version, 3);
    }

    #[test]
    fn unfiltered_mode_keeps_dissatisfied_targets() {
        let mut s = ConversationState::new("a");
        let cfg = ControllerConfig {
            filter_hb: false,
            ..ControllerConfig::default()
        };
        let m = Scripted::new(&[0.9, 0.1], &["what"]);
        step(&mut s, "hey", &m, &cfg).unwrap();
        let out = step(&mut s, "that makes no sense", &m, &cfg).unwrap();
        assert_eq!(out.reply, FEEDBACK_QUESTION);
        assert_eq!(out.extracted.len(), 1);
    }

    #[test]
    fn empty_feedback_is_dropped() {
        let mut s = ConversationState::new("a");
        let m = Scripted::new(&[0.9, 0.1], &["what"]);
        let cfg = ControllerConfig::default();
        step(&mut s, "hey", &m, &cfg).unwrap();
        step(&mut s, "huh", &m, &cfg).unwrap();
        let out = step(&mut s, "   ", &m, &cfg).unwrap();
        assert!(out.extracted.is_empty());
        assert_eq!(out.reply, ACK_AND_TOPIC);
        assert_eq!(s.mode, Mode::Normal);
        assert!(matches!(
            step(&mut s, "", &m, &cfg),
            Err(ControllerError::EmptyUtterance)
        ));
    }

    #[test]
    fn model_failure_leaves_state_untouched() {
        let mut s = ConversationState::new("a");
        let m = Scripted::new(&[], &[]);
        let before = s.clone();
        assert!(step(&mut s, "hi", &m, &ControllerConfig::default()).is_err());
        assert_eq!(s, before);
    }
}
