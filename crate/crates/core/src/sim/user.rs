use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::domain::{Cursor, SyntheticDomain};
use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackStyle {
    Verbatim,
    Suggestion,
    Instructions,
    Options,
}

impl FeedbackStyle {
    pub const ALL: [FeedbackStyle; 4] = [
        FeedbackStyle::Verbatim,
        FeedbackStyle::Suggestion,
        FeedbackStyle::Instructions,
        FeedbackStyle::Options,
    ];
}

/// A simulated human partner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimUser {
    /// Probability of complaining about an off-table reply rather than
    /// silently switching topic.
    pub tolerance: f64,
    /// Weights for verbatim, suggestion, instructions and options feedback.
    pub style_mix: [f64; 4],
    /// Probability that a rating is flipped across the satisfied boundary.
    pub label_noise: f64,
}

impl Default for SimUser {
    fn default() -> Self {
        Self {
            tolerance: 0.8,
            style_mix: [0.53, 0.245, 0.145, 0.08],
            label_noise: 0.0,
        }
    }
}

impl SimUser {
    pub fn validate(&self) -> Result<(), SimError> {
        let p = |v: f64| (0.0..=1.0).contains(&v);
        if !p(self.tolerance) || !p(self.label_noise) {
            return Err(SimError::InvalidConfig(
                "tolerance and label noise must lie in [0, 1]".into(),
            ));
        }
        if WeightedIndex::new(self.style_mix).is_err() {
            return Err(SimError::InvalidConfig(
                "style mix needs a positive weight".into(),
            ));
        }
        Ok(())
    }

    pub fn pick_style(&self, rng: &mut ChaCha8Rng) -> FeedbackStyle {
        let dist = WeightedIndex::new(self.style_mix).expect("validated style mix");
        FeedbackStyle::ALL[dist.sample(rng)]
    }

    fn noisy(&self, rating: u8, rng: &mut ChaCha8Rng) -> u8 {
        if self.label_noise > 0.0 && rating != 2 && rng.gen_bool(self.label_noise) {
            if rating == 1 {
                rng.gen_range(3..=5)
            } else {
                1
            }
        } else {
            rating
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReactionKind {
    Continue,
    Dissatisfied,
    TopicSwitch,
}

/// The user's next turn after a bot reply.
#[derive(Debug, Clone, PartialEq)]
pub struct Reaction {
    pub kind: ReactionKind,
    pub text: String,
    pub rating: u8,
    /// What the user will say if asked for feedback.
    pub feedback: Option<String>,
    /// Where the conversation stands after this turn.
    pub next: Cursor,
}

/// Phrases the ground-truth reply in the given style.
pub fn render_feedback(
    domain: &SyntheticDomain,
    truth: &str,
    style: FeedbackStyle,
    rng: &mut ChaCha8Rng,
) -> String {
    match style {
        FeedbackStyle::Verbatim => truth.to_string(),
        FeedbackStyle::Suggestion => format!("you could say {truth}"),
        FeedbackStyle::Instructions => {
            let content: Vec<String> = crate::text::tokenize(truth)
                .into_iter()
                .filter(|t| domain.words.contains(t))
                .collect();
            format!("tell me about {}", content.join(" and "))
        }
        FeedbackStyle::Options => {
            let inventory = domain.response_inventory();
            let other = inventory.choose(rng).map(String::as_str).unwrap_or(truth);
            format!("either {truth} or {other}")
        }
    }
}

/// The user's reaction to `reply`, given the prompt at `at`.
pub fn simulate_user_reply(
    domain: &SyntheticDomain,
    user: &SimUser,
    at: Cursor,
    reply: &str,
    rng: &mut ChaCha8Rng,
) -> Reaction {
    let prompt = domain.utterance(at);
    let last = domain.config.chain_len - 1;
    if domain.is_on_table(prompt, reply) {
        let rating = user.noisy(rng.gen_range(3..=5), rng);
        let next = if at.pos + 2 < last {
            Cursor {
                chain: at.chain,
                pos: at.pos + 2,
            }
        } else {
            domain.random_opener(rng)
        };
        return Reaction {
            kind: ReactionKind::Continue,
            text: domain.utterance(next).to_string(),
            rating,
            feedback: None,
            next,
        };
    }
    if rng.gen_bool(user.tolerance) {
        let truth = domain
            .utterance(Cursor {
                chain: at.chain,
                pos: at.pos + 1,
            })
            .to_string();
        let style = user.pick_style(rng);
        let text = domain.dissatisfaction.choose(rng).expect("phrases").clone();
        Reaction {
            kind: ReactionKind::Dissatisfied,
            text,
            rating: user.noisy(1, rng),
            feedback: Some(render_feedback(domain, &truth, style, rng)),
            next: at,
        }
    } else {
        let next = domain.random_opener(rng);
        Reaction {
            kind: ReactionKind::TopicSwitch,
            text: domain.utterance(next).to_string(),
            rating: 2,
            feedback: None,
            next,
        }
    }
}
