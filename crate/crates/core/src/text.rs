//! Tokenization, vocabulary management and conversion of conversation
//! histories into token-id sequences.
//!
//! The tokenizer is deliberately small and fully specified: lowercase the
//! input, split on whitespace, and emit every punctuation character as its
//! own token. An apostrophe between two letters stays inside its word, so
//! `"i'm"` is one token while `"'quoted'"` yields three.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const HUMAN_SEP: TokenId = 2;
pub const BOT_SEP: TokenId = 3;
pub const FEEDBACK_PREFIX: TokenId = 4;

/// Reserved tokens in id order. They always occupy ids `0..5`.
pub const RESERVED_TOKENS: [&str; 5] = ["<pad>", "<unk>", "<human>", "<bot>", "<feedback>"];

/// Default number of turns kept in a model context.
pub const DEFAULT_HISTORY_LIMIT: usize = 2;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("utterance text is empty")]
    EmptyUtterance,
    #[error("history limit must be at least 1")]
    ZeroHistoryLimit,
    #[error("vocabulary file: {0}")]
    Io(#[from] io::Error),
    #[error("vocabulary file line {line}: expected reserved token {expected:?}, found {found:?}")]
    BadReserved {
        line: usize,
        expected: String,
        found: String,
    },
    #[error("vocabulary file line {line}: duplicate token {token:?}")]
    DuplicateToken { line: usize, token: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Human,
    Bot,
    System,
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Speaker::Human => "human",
            Speaker::Bot => "bot",
            Speaker::System => "system",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
}

impl Utterance {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Result<Self, TextError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(TextError::EmptyUtterance);
        }
        Ok(Self { speaker, text })
    }

    pub fn human(text: impl Into<String>) -> Self {
        Self::new(Speaker::Human, text).expect("non-empty human utterance")
    }

    pub fn bot(text: impl Into<String>) -> Self {
        Self::new(Speaker::Bot, text).expect("non-empty bot utterance")
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self::new(Speaker::System, text).expect("non-empty system utterance")
    }
}

/// Chronological turns, most recent last, never longer than `history_limit`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Context {
    turns: Vec<Utterance>,
    history_limit: usize,
}

impl Context {
    pub fn turns(&self) -> &[Utterance] {
        &self.turns
    }

    pub fn history_limit(&self) -> usize {
        self.history_limit
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn last(&self) -> Option<&Utterance> {
        self.turns.last()
    }

    pub fn into_turns(self) -> Vec<Utterance> {
        self.turns
    }
}

/// Keeps the last `limit` turns.
pub fn truncate_history(turns: &[Utterance], limit: usize) -> Result<Context, TextError> {
    if limit == 0 {
        return Err(TextError::ZeroHistoryLimit);
    }
    let start = turns.len().saturating_sub(limit);
    Ok(Context {
        turns: turns[start..].to_vec(),
        history_limit: limit,
    })
}

fn is_word_apostrophe(chars: &[char], i: usize) -> bool {
    chars[i] == '\''
        && i > 0
        && i + 1 < chars.len()
        && chars[i - 1].is_alphabetic()
        && chars[i + 1].is_alphabetic()
}

pub fn tokenize(text: &str) -> Vec<String> {
    let lowered: Vec<char> = text.to_lowercase().chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &c) in lowered.iter().enumerate() {
        if c.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if c.is_alphanumeric() || is_word_apostrophe(&lowered, i) {
            current.push(c);
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(c.to_string());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Lowercased, tokenized and single-space joined form of `text`.
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

/// Frozen token/id bijection. Reserved tokens come first, then corpus tokens
/// in order of first occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
    reserved: usize,
}

impl Vocabulary {
    pub fn build<I, S>(corpus: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self::build_with_reserved(corpus, &RESERVED_TOKENS)
    }

    pub fn build_with_reserved<I, S>(corpus: I, reserved: &[&str]) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            ids: HashMap::new(),
            reserved: reserved.len(),
        };
        for token in reserved {
            vocab.insert(token);
        }
        for text in corpus {
            for token in tokenize(text.as_ref()) {
                vocab.insert(&token);
            }
        }
        vocab
    }

    fn insert(&mut self, token: &str) -> TokenId {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.tokens.push(token.to_string());
        self.ids.insert(token.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn reserved_count(&self) -> usize {
        self.reserved
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_reserved(&self, id: TokenId) -> bool {
        (id as usize) < self.reserved
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Maps ids back to tokens, skipping reserved ids.
    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| !self.is_reserved(id))
            .filter_map(|&id| self.token(id).map(str::to_string))
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        for token in &self.tokens {
            writeln!(w, "{token}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TextError> {
        let mut file = io::BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut file)?;
        file.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TextError> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            ids: HashMap::new(),
            reserved: RESERVED_TOKENS.len(),
        };
        for (line_no, line) in reader.lines().enumerate() {
            let token = line?;
            if let Some(expected) = RESERVED_TOKENS.get(line_no) {
                if token != *expected {
                    return Err(TextError::BadReserved {
                        line: line_no + 1,
                        expected: expected.to_string(),
                        found: token,
                    });
                }
            }
            if vocab.ids.contains_key(&token) {
                return Err(TextError::DuplicateToken {
                    line: line_no + 1,
                    token,
                });
            }
            vocab.insert(&token);
        }
        if vocab.len() < RESERVED_TOKENS.len() {
            let line = vocab.len() + 1;
            return Err(TextError::BadReserved {
                line,
                expected: RESERVED_TOKENS[vocab.len()].to_string(),
                found: String::new(),
            });
        }
        Ok(vocab)
    }
}

fn speaker_delimiter(speaker: Speaker) -> TokenId {
    match speaker {
        Speaker::Human => HUMAN_SEP,
        // System turns never reach a context; treat them as the bot's side.
        Speaker::Bot | Speaker::System => BOT_SEP,
    }
}

pub fn vectorize_context(ctx: &Context, vocab: &Vocabulary) -> Vec<TokenId> {
    vectorize_turns(ctx.turns(), vocab)
}

pub fn vectorize_turns(turns: &[Utterance], vocab: &Vocabulary) -> Vec<TokenId> {
    let mut ids = Vec::new();
    for turn in turns {
        ids.push(speaker_delimiter(turn.speaker));
        ids.extend(vocab.encode(&turn.text));
    }
    ids
}

pub fn vectorize_dialogue_target(y: &str, vocab: &Vocabulary) -> Vec<TokenId> {
    vocab.encode(y)
}

pub fn vectorize_feedback_target(f: &str, vocab: &Vocabulary) -> Vec<TokenId> {
    let mut ids = vec![FEEDBACK_PREFIX];
    ids.extend(vocab.encode(f));
    ids
}
