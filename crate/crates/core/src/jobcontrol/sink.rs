use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::RunState;
use crate::clock::Timestamp;

/// One line in the notification sink.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notification {
    pub run_id: u64,
    pub job_id: u64,
    pub job: String,
    pub state: RunState,
    pub attempt: u32,
    pub error: Option<String>,
    pub ts: Timestamp,
}

#[derive(Debug, thiserror::Error)]
#[error("notification sink unavailable: {0}")]
pub struct SinkError(pub String);

pub trait NotificationSink {
    fn deliver(&mut self, note: &Notification) -> Result<(), SinkError>;
}

/// Appends one JSON object per line.
#[derive(Debug, Clone)]
pub struct FileSink {
    path: PathBuf,
}

impl FileSink {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        FileSink { path: path.into() }
    }

    pub fn path(&self) -> &std::path::Path {
        &self.path
    }
}

impl NotificationSink for FileSink {
    fn deliver(&mut self, note: &Notification) -> Result<(), SinkError> {
        let fail = |e: std::io::Error| SinkError(format!("{}: {e}", self.path.display()));
        let mut line = serde_json::to_vec(note).map_err(|e| SinkError(e.to_string()))?;
        line.push(b'\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(fail)?;
        f.write_all(&line).map_err(fail)?;
        f.sync_data().map_err(fail)
    }
}

/// Keeps notifications in memory. While `down` is set every delivery fails.
#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    pub lines: Vec<Notification>,
    pub down: bool,
}

impl NotificationSink for MemorySink {
    fn deliver(&mut self, note: &Notification) -> Result<(), SinkError> {
        if self.down {
            return Err(SinkError("memory sink marked down".into()));
        }
        self.lines.push(note.clone());
        Ok(())
    }
}
