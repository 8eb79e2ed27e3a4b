//! Append-only event log for security decisions and other audit events.
//!
//! Entries live in memory and, when a path is attached, are appended to a
//! JSON-lines file as they are recorded.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Authenticate,
    Authorize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub ts: Timestamp,
    pub kind: EventKind,
    /// Username or `login:<id>`; never a credential.
    pub actor: String,
    pub outcome: String,
    pub detail: String,
}

#[derive(Debug, Default)]
pub struct EventLog {
    entries: Vec<Event>,
    next_seq: u64,
    path: Option<PathBuf>,
    file: Option<File>,
}

impl EventLog {
    pub fn in_memory() -> Self {
        EventLog {
            next_seq: 1,
            ..Default::default()
        }
    }

    /// Appends to `path`, creating it if needed. Existing lines are kept.
    pub fn open(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(EventLog {
            entries: Vec::new(),
            next_seq: 1,
            path: Some(path.to_path_buf()),
            file: Some(file),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn record(
        &mut self,
        ts: Timestamp,
        kind: EventKind,
        actor: impl Into<String>,
        outcome: impl Into<String>,
        detail: impl Into<String>,
    ) {
        let event = Event {
            seq: self.next_seq.max(1),
            ts,
            kind,
            actor: actor.into(),
            outcome: outcome.into(),
            detail: detail.into(),
        };
        self.next_seq = event.seq + 1;
        if let Some(file) = self.file.as_mut() {
            let line = serde_json::to_string(&event).expect("event serializes");
            if let Err(e) = writeln!(file, "{line}") {
                tracing::warn!(error = %e, "event log append failed");
            }
        }
        self.entries.push(event);
    }

    /// Events recorded through this handle (not earlier file contents).
    pub fn entries(&self) -> &[Event] {
        &self.entries
    }
}
