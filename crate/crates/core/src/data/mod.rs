//! Dataset records and their JSONL form, the satisfaction rating mapping,
//! candidate pools, and the durable experience store.

mod pool;
mod store;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{Speaker, Utterance};

pub use pool::{CandidatePool, PoolError};
pub use store::{Counters, ExampleKind, ExperienceStore, ExtractedExample, StoreError};

/// Fraction of malformed lines tolerated before a load is rejected.
pub const MAX_MALFORMED_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Dialogue,
    Feedback,
    Satisfaction,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Dialogue => "dialogue",
            Task::Feedback => "feedback",
            Task::Satisfaction => "satisfaction",
        }
    }

    pub fn is_ranking(self) -> bool {
        !matches!(self, Task::Satisfaction)
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Task {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dialogue" => Ok(Task::Dialogue),
            "feedback" => Ok(Task::Feedback),
            "satisfaction" => Ok(Task::Satisfaction),
            other => Err(DataError::Unknown(format!("task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where an example came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    HH,
    HB,
    FB,
    SAT,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    /// 1 for dissatisfied.
    pub fn as_target(self) -> u8 {
        match self {
            Label::Negative => 1,
            Label::Positive => 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("rating {0} outside 1..=5")]
    InvalidRating(u8),
    #[error("{path}: {bad} of {total} lines malformed (limit {limit:.0}%)")]
    TooManyMalformed {
        path: PathBuf,
        bad: usize,
        total: usize,
        limit: f64,
    },
    #[error("unknown {0}")]
    Unknown(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Ratings 1 and 3..=5 map to a label; 2 is discarded.
pub fn map_rating_to_label(rating: u8) -> Result<Option<Label>, DataError> {
    match rating {
        1 => Ok(Some(Label::Negative)),
        2 => Ok(None),
        3..=5 => Ok(Some(Label::Positive)),
        r => Err(DataError::InvalidRating(r)),
    }
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub task: Task,
    pub split: Split,
    pub x: Vec<Utterance>,
    #[serde(default)]
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<u8>,
    pub source: Source,
    #[serde(default)]
    pub ts: u64,
}

impl Record {
    pub fn dialogue(split: Split, x: Vec<Utterance>, y: impl Into<String>, source: Source) -> Self {
        Self {
            task: Task::Dialogue,
            split,
            x,
            target: y.into(),
            rating: None,
            source,
            ts: 0,
        }
    }

    pub fn feedback(split: Split, x: Vec<Utterance>, f: impl Into<String>) -> Self {
        Self {
            task: Task::Feedback,
            split,
            x,
            target: f.into(),
            rating: None,
            source: Source::FB,
            ts: 0,
        }
    }

    pub fn satisfaction(split: Split, x: Vec<Utterance>, rating: u8) -> Self {
        Self {
            task: Task::Satisfaction,
            split,
            x,
            target: String::new(),
            rating: Some(rating),
            source: Source::SAT,
            ts: 0,
        }
    }

    /// Binary target (1 = dissatisfied), `None` for discarded ratings.
    pub fn label(&self) -> Option<u8> {
        self.rating
            .and_then(|r| map_rating_to_label(r).ok().flatten())
            .map(Label::as_target)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.x.is_empty() {
            return Err("empty context".into());
        }
        for u in &self.x {
            if u.text.trim().is_empty() {
                return Err("empty utterance in context".into());
            }
            if u.speaker == Speaker::System {
                return Err("system turn in context".into());
            }
        }
        if self.x.windows(2).any(|w| w[0].speaker == w[1].speaker) {
            return Err("speakers do not alternate".into());
        }
        match self.task {
            Task::Dialogue | Task::Feedback if self.target.trim().is_empty() => {
                Err("empty target".into())
            }
            Task::Satisfaction => match self.rating {
                None => Err("missing rating".into()),
                Some(r) => map_rating_to_label(r)
                    .map(|_| ())
                    .map_err(|e| e.to_string()),
            },
            _ => Ok(()),
        }
    }
}

/// Records of one task and split.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub task: Task,
    pub split: Split,
    pub records: Vec<Record>,
}

impl DatasetSplit {
    pub fn new(task: Task, split: Split, records: Vec<Record>) -> Self {
        Self {
            task,
            split,
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Targets in first-seen order without exact duplicates.
    pub fn distinct_targets(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.target.as_str()))
            .map(|r| r.target.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Malformed {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug)]
pub struct Loaded {
    pub data: DatasetSplit,
    pub skipped: Vec<Malformed>,
}

/// Reads a JSONL dataset, skipping malformed lines or lines of another task.
pub fn load_dataset(path: impl AsRef<Path>, task: Task) -> Result<Loaded, DataError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut total = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        let parsed = serde_json::from_str::<Record>(&line)
            .map_err(|e| e.to_string())
            .and_then(|r| {
                if r.task != task {
                    return Err(format!("task {} in a {} file", r.task, task));
                }
                r.validate().map(|_| r)
            });
        match parsed {
            Ok(r) => records.push(r),
            Err(reason) => {
                log::warn!(
                    "{}:{}: skipping malformed record: {reason}",
                    path.display(),
                    i + 1
                );
                skipped.push(Malformed {
                    line: i + 1,
                    reason,
                });
            }
        }
    }
    if total > 0 && skipped.len() as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        return Err(DataError::TooManyMalformed {
            path: path.to_path_buf(),
            bad: skipped.len(),
            total,
            limit: MAX_MALFORMED_FRACTION * 100.0,
        });
    }
    let split = records.first().map(|r| r.split).unwrap_or(Split::Train);
    Ok(Loaded {
        data: DatasetSplit::new(task, split, records),
        skipped,
    })
}

pub fn save_dataset(data: &DatasetSplit, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in &data.records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes each split to `{dir}/{task}.{split}.jsonl` and returns the paths.
pub fn export_splits(
    dir: impl AsRef<Path>,
    splits: &[&DatasetSplit],
) -> Result<Vec<PathBuf>, DataError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    splits
        .iter()
        .map(|s| {
            let path = dir.join(format!("{}.{}.jsonl", s.task, s.split));
            save_dataset(s, &path).map(|_| path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rating_mapping() {
        assert_eq!(map_rating_to_label(1).unwrap(), Some(Label::Negative));
        assert_eq!(map_rating_to_label(2).unwrap(), None);
        for r in 3..=5 {
            assert_eq!(map_rating_to_label(r).unwrap(), Some(Label::Positive));
        }
        for r in [0, 6, 255] {
            assert!(matches!(
                map_rating_to_label(r),
                Err(DataError::InvalidRating(_))
            ));
        }
    }

    #[test]
    fn record_json_shape() {
        let r = Record::dialogue(
            Split::Train,
            vec![Utterance::bot("hi there"), Utterance::human("hey")],
            "how are you?",
            Source::HH,
        );
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains(r#""task":"dialogue""#));
        assert!(json.contains(r#""speaker":"bot""#));
        assert!(json.contains(r#""source":"HH""#));
        assert!(!json.contains("rating"));
        let back: Record = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn validation_rules() {
        let good = Record::satisfaction(
            Split::Test,
            vec![Utterance::bot("a"), Utterance::human("b")],
            4,
        );
        assert!(good.validate().is_ok());
        assert_eq!(good.label(), Some(0));
        let mut bad = good.clone();
        bad.rating = Some(9);
        assert!(bad.validate().is_err());
        let repeated = Record::feedback(
            Split::Train,
            vec![Utterance::human("a"), Utterance::human("b")],
            "c",
        );
        assert!(repeated.validate().is_err());
        let empty = Record::feedback(Split::Train, vec![Utterance::human("a")], " ");
        assert!(empty.validate().is_err());
    }

    #[test]
    fn load_skips_and_rejects() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let good = Record::dialogue(Split::Valid, vec![Utterance::human("x")], "y", Source::HH);
        let mut lines: Vec<String> = (0..19)
            .map(|_| serde_json::to_string(&good).unwrap())
            .collect();
        lines.push("{not json".into());
        std::fs::write(&path, lines.join("\n")).unwrap();
        let loaded = load_dataset(&path, Task::Dialogue).unwrap();
        assert_eq!(loaded.data.len(), 19);
        assert_eq!(loaded.data.split, Split::Valid);
        assert_eq!(
            loaded.skipped,
            vec![Malformed {
                line: 20,
                reason: loaded.skipped[0].reason.clone()
            }]
        );

        lines.truncate(5);
        lines.push("[]".into());
        std::fs::write(&path, lines.join("\n")).unwrap();
        assert!(matches!(
            load_dataset(&path, Task::Dialogue),
            Err(DataError::TooManyMalformed { .. })
        ));
    }

    #[test]
    fn export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = DatasetSplit::new(
            Task::Feedback,
            Split::Test,
            vec![Record::feedback(
                Split::Test,
                vec![Utterance::bot("a"), Utterance::human("b")],
                "say c",
            )],
        );
        let paths = export_splits(dir.path(), &[&data]).unwrap();
        assert!(paths[0].ends_with("feedback.test.jsonl"));
        let back = load_dataset(&paths[0], Task::Feedback).unwrap();
        assert_eq!(back.data, data);
        assert!(back.skipped.is_empty());
    }
}
