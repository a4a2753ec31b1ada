//! Append-only JSONL run log guarded by an advisory lock.

use std::fs::{self, File, OpenOptions, TryLockError};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimizer::{BaselineSummary, IterationRecord};
use crate::pools::PromptSource;
use crate::scoring::ScoreValue;
use crate::selector::ArmId;

pub const LOG_FILE_NAME: &str = "run.jsonl";

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("run log {0} is locked by another writer")]
    Locked(PathBuf),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("cannot serialize record: {0}")]
    Serialize(String),
}

fn io_err(path: &Path, e: std::io::Error) -> LogError {
    LogError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEvent {
    pub iteration: u32,
    pub instruction_id: Option<ArmId>,
    pub query: String,
    pub prompt_text: String,
    pub score: ScoreValue,
    pub source: PromptSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    pub iteration: Option<u32>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record_kind", rename_all = "snake_case")]
pub enum RecordBody {
    ScoreEvent(ScoreEvent),
    IterationSummary(IterationRecord),
    Warning(Warning),
    BaselineSummary(BaselineSummary),
}

impl RecordBody {
    pub fn warning(iteration: Option<u32>, message: impl Into<String>) -> Self {
        RecordBody::Warning(Warning {
            iteration,
            message: message.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogRecord {
    /// RFC 3339, UTC.
    pub timestamp: String,
    #[serde(flatten)]
    pub body: RecordBody,
}

impl RunLogRecord {
    pub fn now(body: RecordBody) -> Self {
        Self {
            timestamp: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            body,
        }
    }
}

/// Single writer for one log file. The lock is held until drop.
#[derive(Debug)]
pub struct RunLogWriter {
    path: PathBuf,
    file: File,
    _lock: File,
}

impl RunLogWriter {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LogError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        let lock_path = path.with_extension("lock");
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(|e| io_err(&lock_path, e))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(TryLockError::WouldBlock) => return Err(LogError::Locked(path)),
            Err(TryLockError::Error(e)) => return Err(io_err(&lock_path, e)),
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        Ok(Self {
            path,
            file,
            _lock: lock,
        })
    }

    /// Opens `<dir>/run.jsonl`.
    pub fn open_in_dir(dir: impl AsRef<Path>) -> Result<Self, LogError> {
        Self::open(dir.as_ref().join(LOG_FILE_NAME))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &RunLogRecord) -> Result<(), LogError> {
        let mut line =
            serde_json::to_string(record).map_err(|e| LogError::Serialize(e.to_string()))?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .map_err(|e| io_err(&self.path, e))?;
        self.file.flush().map_err(|e| io_err(&self.path, e))
    }

    pub fn append_body(&mut self, body: RecordBody) -> Result<(), LogError> {
        self.append(&RunLogRecord::now(body))
    }
}

/// Appends one record, taking and releasing the lock around the write.
pub fn write_run_log(path: impl AsRef<Path>, record: &RunLogRecord) -> Result<(), LogError> {
    RunLogWriter::open(path)?.append(record)
}

pub fn load_run_log(path: impl AsRef<Path>) -> Result<Vec<RunLogRecord>, LogError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| LogError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(i: u32, score: f64) -> RunLogRecord {
        RunLogRecord::now(RecordBody::ScoreEvent(ScoreEvent {
            iteration: i,
            instruction_id: Some(ArmId(i as u64)),
            query: "cactus".into(),
            prompt_text: format!("prompt {i}"),
            score: ScoreValue::new(score).unwrap(),
            source: PromptSource::Generated,
        }))
    }

    #[test]
    fn three_records_three_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let mut w = RunLogWriter::open(&path).unwrap();
        for i in 0..3 {
            w.append(&event(i, 25.0 + i as f64)).unwrap();
        }
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        for line in lines {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert_eq!(v["record_kind"], "score_event");
        }
    }

    #[test]
    fn second_writer_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let _first = RunLogWriter::open(&path).unwrap();
        assert!(matches!(
            RunLogWriter::open(&path),
            Err(LogError::Locked(_))
        ));
        drop(_first);
        assert!(RunLogWriter::open(&path).is_ok());
    }

    #[test]
    fn non_finite_scores_cannot_reach_the_log() {
        assert!(ScoreValue::new(f64::NAN).is_err());
        let line = r#"{"timestamp":"t","record_kind":"score_event","iteration":0,"instruction_id":null,"query":"q","prompt_text":"p","score":null,"source":"generated"}"#;
        assert!(serde_json::from_str::<RunLogRecord>(line).is_err());
    }

    #[test]
    fn empty_file_loads_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        fs::write(&path, "").unwrap();
        assert!(load_run_log(&path).unwrap().is_empty());
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_run_log("/nonexistent/run.jsonl").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/run.jsonl"));
    }
}
