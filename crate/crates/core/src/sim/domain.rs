use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::data::{DatasetSplit, Record, Source, Split, Task};
use crate::text::Utterance;

const CONSONANTS: &[char] = &[
    'b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'z',
];
const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];

/// Sentence frames for the three content words of an utterance.
const TEMPLATES: &[&str] = &[
    "i like {} , {} and {} .",
    "do you know {} or {} ? maybe {} .",
    "my {} has {} with {} .",
    "we saw {} near {} and {} !",
];

/// Reactions to an off-table reply. The first half trips the regex baseline,
/// the rest does not.
const DISSATISFACTION: &[&str] = &[
    "what are you talking about?",
    "that makes no sense.",
    "you're not making sense.",
    "what do you mean?",
    "i said something else.",
    "umm, what?",
    "what does that have to do with anything?",
    "you said what?",
    "that's not right.",
    "hmm, no.",
    "you lost me there.",
    "wrong answer!",
    "that was a weird reply.",
    "i don't follow.",
    "off topic again.",
    "nope, try harder.",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainConfig {
    pub words: usize,
    pub chain_len: usize,
    pub train_chains: usize,
    pub valid_chains: usize,
    pub test_chains: usize,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            words: 240,
            chain_len: 8,
            train_chains: 60,
            valid_chains: 10,
            test_chains: 25,
        }
    }
}

/// One topic: a scripted run of utterances where each is the correct reply
/// to the one before.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub topic: String,
    pub split: Split,
    pub utterances: Vec<String>,
}

/// Position inside a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cursor {
    pub chain: usize,
    pub pos: usize,
}

/// A closed world of topics whose content words follow a hidden successor
/// map, so that correct replies can be learned rather than memorised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDomain {
    pub seed: u64,
    pub config: DomainConfig,
    pub words: Vec<String>,
    pub successor: Vec<usize>,
    pub chains: Vec<Chain>,
    pub dissatisfaction: Vec<String>,
    #[serde(skip)]
    table: HashMap<String, Vec<String>>,
}

fn fixed_tokens() -> BTreeSet<String> {
    TEMPLATES
        .iter()
        .chain(DISSATISFACTION)
        .flat_map(|t| crate::text::tokenize(t))
        .chain(["you", "could", "say", "tell", "me", "about", "either", "or"].map(String::from))
        .collect()
}

fn make_words(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let stop = fixed_tokens();
    let mut seen = BTreeSet::new();
    let mut words = Vec::with_capacity(n);
    while words.len() < n {
        let syllables = if rng.gen_bool(0.7) { 2 } else { 3 };
        let w: String = (0..syllables)
            .flat_map(|_| {
                [
                    *CONSONANTS.choose(rng).unwrap(),
                    *VOWELS.choose(rng).unwrap(),
                ]
            })
            .collect();
        if !stop.contains(&w) && seen.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

fn render(template: &str, words: &[&str]) -> String {
    let mut out = String::new();
    let mut rest = template;
    for w in words {
        let (head, tail) = rest.split_once("{}").expect("template slot");
        out.push_str(head);
        out.push_str(w);
        rest = tail;
    }
    out.push_str(rest);
    out
}

impl SyntheticDomain {
    pub fn generate(config: DomainConfig, seed: u64) -> Result<Self, SimError> {
        if config.words < 3 || config.chain_len < 2 || config.train_chains == 0 {
            return Err(SimError::InvalidConfig(
                "domain needs ≥ 3 words, chains of ≥ 2 and ≥ 1 train chain".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words = make_words(config.words, &mut rng);
        let mut successor: Vec<usize> = (0..config.words).collect();
        successor.shuffle(&mut rng);
        let splits = [
            (Split::Train, config.train_chains),
            (Split::Valid, config.valid_chains),
            (Split::Test, config.test_chains),
        ];
        let mut chains = Vec::new();
        for (split, count) in splits {
            for _ in 0..count {
                let mut ids: Vec<usize> =
                    rand::seq::index::sample(&mut rng, config.words, 3).into_vec();
                let mut utterances = Vec::with_capacity(config.chain_len);
                for _ in 0..config.chain_len {
                    let template = TEMPLATES.choose(&mut rng).unwrap();
                    let slots: Vec<&str> = ids.iter().map(|&i| words[i].as_str()).collect();
                    utterances.push(render(template, &slots));
                    ids = ids.iter().map(|&i| successor[i]).collect();
                }
                chains.push(Chain {
                    topic: words[ids[0]].clone(),
                    split,
                    utterances,
                });
            }
        }
        let mut domain = Self {
            seed,
            config,
            words,
            successor,
            chains,
            dissatisfaction: DISSATISFACTION.iter().map(|s| s.to_string()).collect(),
            table: HashMap::new(),
        };
        domain.index();
        Ok(domain)
    }

    fn index(&mut self) {
        self.table.clear();
        for chain in &self.chains {
            for w in chain.utterances.windows(2) {
                self.table
                    .entry(w[0].clone())
                    .or_default()
                    .push(w[1].clone());
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SimError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let mut domain: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        domain.index();
        Ok(domain)
    }

    /// Whether `reply` is a correct response to `prompt`.
    pub fn is_on_table(&self, prompt: &str, reply: &str) -> bool {
        self.table
            .get(prompt)
            .is_some_and(|r| r.iter().any(|c| c == reply))
    }

    pub fn is_dissatisfaction(&self, text: &str) -> bool {
        self.dissatisfaction.iter().any(|d| d == text)
    }

    pub fn utterance(&self, c: Cursor) -> &str {
        &self.chains[c.chain].utterances[c.pos]
    }

    pub fn chains_in(&self, split: Split) -> impl Iterator<Item = usize> + '_ {
        self.chains
            .iter()
            .enumerate()
            .filter(move |(_, c)| c.split == split)
            .map(|(i, _)| i)
    }

    /// A random train-world prompt that still has a correct reply.
    pub fn random_opener(&self, rng: &mut ChaCha8Rng) -> Cursor {
        let chains: Vec<usize> = self.chains_in(Split::Train).collect();
        Cursor {
            chain: *chains.choose(rng).expect("train chains"),
            pos: rng.gen_range(0..self.config.chain_len - 1),
        }
    }

    /// Every utterance the users of the train world can expect as a reply.
    pub fn response_inventory(&self) -> Vec<String> {
        self.chains_in(Split::Train)
            .flat_map(|i| self.chains[i].utterances.iter().cloned())
            .collect()
    }

    /// All Dialogue examples of a split: the previous turn (if any) and the
    /// prompt as context, the next utterance as target.
    pub fn dialogue_split(&self, split: Split) -> DatasetSplit {
        let mut records = Vec::new();
        for i in self.chains_in(split) {
            let u = &self.chains[i].utterances;
            for pos in 0..u.len() - 1 {
                let mut x = Vec::with_capacity(2);
                if pos > 0 {
                    x.push(Utterance::bot(u[pos - 1].clone()));
                }
                x.push(Utterance::human(u[pos].clone()));
                records.push(Record::dialogue(split, x, u[pos + 1].clone(), Source::HH));
            }
        }
        DatasetSplit::new(Task::Dialogue, split, records)
    }

    /// `n` train-split Dialogue examples drawn without replacement.
    pub fn sample_hh(&self, n: usize, rng: &mut ChaCha8Rng) -> DatasetSplit {
        let all = self.dialogue_split(Split::Train);
        let n = n.min(all.len());
        let picks = rand::seq::index::sample(rng, all.len(), n).into_vec();
        let records = picks.into_iter().map(|i| all.records[i].clone()).collect();
        DatasetSplit::new(Task::Dialogue, Split::Train, records)
    }

    /// Corpus for building a vocabulary that covers everything users say.
    pub fn corpus(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .chains
            .iter()
            .flat_map(|c| c.utterances.iter().cloned())
            .collect();
        out.extend(self.dissatisfaction.iter().cloned());
        out.extend(fixed_tokens());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticDomain {
        let cfg = DomainConfig {
            words: 30,
            chain_len: 5,
            train_chains: 4,
            valid_chains: 2,
            test_chains: 2,
        };
        SyntheticDomain::generate(cfg, 3).unwrap()
    }

    #[test]
    fn chains_follow_successor_map() {
        let d = small();
        assert_eq!(d, SyntheticDomain::generate(d.config, 3).unwrap());
        let id = |w: &str| d.words.iter().position(|x| x == w);
        for chain in &d.chains {
            for pair in chain.utterances.windows(2) {
                assert!(d.is_on_table(&pair[0], &pair[1]));
                let a: Vec<usize> = crate::text::tokenize(&pair[0])
                    .iter()
                    .filter_map(|t| id(t))
                    .collect();
                let b: Vec<usize> = crate::text::tokenize(&pair[1])
                    .iter()
                    .filter_map(|t| id(t))
                    .collect();
                assert_eq!(a.iter().map(|&i| d.successor[i]).collect::<Vec<_>>(), b);
            }
        }
    }

    #[test]
    fn splits_and_inventory() {
        let d = small();
        assert_eq!(d.dialogue_split(Split::Test).len(), 2 * 4);
        assert_eq!(d.response_inventory().len(), 4 * 5);
        let hh = d.dialogue_split(Split::Train);
        let inventory = d.response_inventory();
        assert!(hh.records.iter().all(|r| inventory.contains(&r.target)));
        assert!(hh.records.iter().all(|r| r.validate().is_ok()));
    }

    #[test]
    fn file_round_trip_restores_table() {
        let d = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("domain.json");
        d.save(&path).unwrap();
        let back = SyntheticDomain::load(&path).unwrap();
        let u = &back.chains[0].utterances;
        assert!(back.is_on_table(&u[0], &u[1]));
        assert_eq!(back, d);
    }
}
