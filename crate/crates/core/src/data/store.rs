use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DatasetSplit, Record, Source, Split, Task};
use crate::text::Utterance;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}:{line}: corrupt log entry: {source}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleKind {
    HbDialogue,
    Feedback,
    SatisfactionBootstrap,
}

impl ExampleKind {
    pub const ALL: [ExampleKind; 3] = [
        ExampleKind::HbDialogue,
        ExampleKind::Feedback,
        ExampleKind::SatisfactionBootstrap,
    ];

    fn file_name(self) -> &'static str {
        match self {
            ExampleKind::HbDialogue => "hb_dialogue.jsonl",
            ExampleKind::Feedback => "feedback.jsonl",
            ExampleKind::SatisfactionBootstrap => "satisfaction_bootstrap.jsonl",
        }
    }
}

/// A training example harvested from a live conversation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedExample {
    pub kind: ExampleKind,
    pub x: Vec<Utterance>,
    #[serde(default)]
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<u8>,
    pub model_version: u64,
    pub session: String,
    pub turn_index: usize,
    #[serde(default)]
    pub ts: u64,
}

impl ExtractedExample {
    pub fn to_record(&self, split: Split) -> Record {
        let (task, source) = match self.kind {
            ExampleKind::HbDialogue => (Task::Dialogue, Source::HB),
            ExampleKind::Feedback => (Task::Feedback, Source::FB),
            ExampleKind::SatisfactionBootstrap => (Task::Satisfaction, Source::SAT),
        };
        Record {
            task,
            split,
            x: self.x.clone(),
            target: self.target.clone(),
            rating: self.rating,
            source,
            ts: self.ts,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub hb_dialogue: usize,
    pub feedback: usize,
    pub satisfaction_bootstrap: usize,
}

impl Counters {
    fn bump(&mut self, kind: ExampleKind) {
        match kind {
            ExampleKind::HbDialogue => self.hb_dialogue += 1,
            ExampleKind::Feedback => self.feedback += 1,
            ExampleKind::SatisfactionBootstrap => self.satisfaction_bootstrap += 1,
        }
    }

    pub fn get(&self, kind: ExampleKind) -> usize {
        match kind {
            ExampleKind::HbDialogue => self.hb_dialogue,
            ExampleKind::Feedback => self.feedback,
            ExampleKind::SatisfactionBootstrap => self.satisfaction_bootstrap,
        }
    }

    /// Dialogue and feedback examples, the ones that count toward retraining.
    pub fn extracted(&self) -> usize {
        self.hb_dialogue + self.feedback
    }

    fn minus(&self, other: &Counters) -> Counters {
        Counters {
            hb_dialogue: self.hb_dialogue - other.hb_dialogue,
            feedback: self.feedback - other.feedback,
            satisfaction_bootstrap: self.satisfaction_bootstrap - other.satisfaction_bootstrap,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RetrainMarker {
    totals: Counters,
}

#[derive(Debug, Default)]
struct Inner {
    logs: BTreeMap<ExampleKind, Vec<ExtractedExample>>,
    totals: Counters,
    at_last_retrain: Counters,
}

/// Append-only log of extracted examples, optionally mirrored to JSONL
/// files so that counters survive a restart.
#[derive(Debug)]
pub struct ExperienceStore {
    dir: Option<PathBuf>,
    inner: Mutex<Inner>,
}

const MARKER_FILE: &str = "retrain.jsonl";

fn append_line(path: &Path, line: &[u8]) -> std::io::Result<()> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    let before = file.metadata()?.len();
    let written = file.write_all(line).and_then(|_| file.sync_data());
    if written.is_err() {
        let _ = file.set_len(before);
    }
    written
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, StoreError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| StoreError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

impl ExperienceStore {
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            inner: Mutex::new(Inner::default()),
        }
    }

    /// Opens (or creates) a store directory and replays its logs.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let mut inner = Inner::default();
        for kind in ExampleKind::ALL {
            let examples: Vec<ExtractedExample> = read_lines(&dir.join(kind.file_name()))?;
            for _ in &examples {
                inner.totals.bump(kind);
            }
            inner.logs.insert(kind, examples);
        }
        let markers: Vec<RetrainMarker> = read_lines(&dir.join(MARKER_FILE))?;
        if let Some(last) = markers.last() {
            inner.at_last_retrain = last.totals;
        }
        Ok(Self {
            dir: Some(dir),
            inner: Mutex::new(inner),
        })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Durably appends one example, stamping `ts` with its logical sequence
    /// number, and returns the counters since the last retrain. A failed
    /// write leaves neither the file nor the counters changed.
    pub fn append(&self, mut example: ExtractedExample) -> Result<Counters, StoreError> {
        let mut inner = self.lock();
        let t = inner.totals;
        example.ts = (t.hb_dialogue + t.feedback + t.satisfaction_bootstrap) as u64;
        if let Some(dir) = &self.dir {
            let mut line = serde_json::to_vec(&example)?;
            line.push(b'\n');
            append_line(&dir.join(example.kind.file_name()), &line)?;
        }
        inner.totals.bump(example.kind);
        inner.logs.entry(example.kind).or_default().push(example);
        Ok(inner.totals.minus(&inner.at_last_retrain))
    }

    pub fn mark_retrained(&self) -> Result<(), StoreError> {
        let mut inner = self.lock();
        if let Some(dir) = &self.dir {
            let mut line = serde_json::to_vec(&RetrainMarker {
                totals: inner.totals,
            })?;
            line.push(b'\n');
            append_line(&dir.join(MARKER_FILE), &line)?;
        }
        inner.at_last_retrain = inner.totals;
        Ok(())
    }

    pub fn totals(&self) -> Counters {
        self.lock().totals
    }

    pub fn since_retrain(&self) -> Counters {
        let inner = self.lock();
        inner.totals.minus(&inner.at_last_retrain)
    }

    pub fn examples(&self, kind: ExampleKind) -> Vec<ExtractedExample> {
        self.lock().logs.get(&kind).cloned().unwrap_or_default()
    }

    /// Every example of `kind` as a training split.
    pub fn to_dataset(&self, kind: ExampleKind) -> DatasetSplit {
        let records = self
            .lock()
            .logs
            .get(&kind)
            .map(|v| v.iter().map(|e| e.to_record(Split::Train)).collect())
            .unwrap_or_default();
        let task = match kind {
            ExampleKind::HbDialogue => Task::Dialogue,
            ExampleKind::Feedback => Task::Feedback,
            ExampleKind::SatisfactionBootstrap => Task::Satisfaction,
        };
        DatasetSplit::new(task, Split::Train, records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(kind: ExampleKind, n: usize) -> ExtractedExample {
        ExtractedExample {
            kind,
            x: vec![
                Utterance::bot("how was your day?"),
                Utterance::human("great"),
            ],
            target: format!("target {n}"),
            rating: None,
            model_version: 1,
            session: "s".into(),
            turn_index: n,
            ts: n as u64,
        }
    }

    #[test]
    fn counters_survive_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = ExperienceStore::open(dir.path()).unwrap();
            store.append(example(ExampleKind::HbDialogue, 0)).unwrap();
            store.append(example(ExampleKind::Feedback, 1)).unwrap();
            store.mark_retrained().unwrap();
            let c = store.append(example(ExampleKind::HbDialogue, 2)).unwrap();
            assert_eq!(c.extracted(), 1);
        }
        let store = ExperienceStore::open(dir.path()).unwrap();
        assert_eq!(store.totals().hb_dialogue, 2);
        assert_eq!(store.totals().feedback, 1);
        assert_eq!(store.since_retrain().extracted(), 1);
        let data = store.to_dataset(ExampleKind::HbDialogue);
        assert_eq!(data.task, Task::Dialogue);
        assert_eq!(data.records[1].target, "target 2");
        assert_eq!(data.records[1].source, Source::HB);
        let paths = crate::data::export_splits(dir.path().join("out"), &[&data]).unwrap();
        let back = crate::data::load_dataset(&paths[0], Task::Dialogue).unwrap();
        assert_eq!(back.data.records, data.records);
    }

    #[test]
    fn corrupt_log_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("feedback.jsonl"), "{\"kind\":\n").unwrap();
        assert!(matches!(
            ExperienceStore::open(dir.path()),
            Err(StoreError::Corrupt { line: 1, .. })
        ));
    }
}
