//! Append-only event log.
//!
//! The ledger is a newline-delimited JSON file, one event per line:
//!
//! ```text
//! {"schema":1,"seq":1,"at":"2024-05-01T09:00:00Z","kind":"ProjectConfigured","payload":{...}}
//! ```
//!
//! * `schema` - payload schema version, currently [`SCHEMA_VERSION`].
//! * `seq` - contiguous sequence number starting at 1.
//! * `at` - RFC 3339 UTC instant, non-decreasing along the file.
//! * `kind`/`payload` - the [`EventKind`] variant and its fields.
//!
//! Every append is flushed and synced before it returns. A final line without
//! a trailing newline is a torn write and is truncated on open; any other
//! malformed line is reported as corruption.

mod fold;
mod stats;

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::history::VersionEntry;
use crate::model::{ActivityCategory, ActivityRecord, BugRecord, FailureKind, Project, TestRunRecord};

pub use fold::{fold_events, CategoryTotal, Folder, MaintenanceFilter, MeasurementTables, OpenActivity};
pub use stats::{
    execution_times, implementation_stats, maintenance_series, summary_stats, CategoryStats, ExecTimeRow,
    ExecTimeTable, FrameworkSummary, ImplementationRow, MeanSd, SummaryStats,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("event instant {at} precedes the previous event at {last}")]
    OutOfOrder { at: DateTime<Utc>, last: DateTime<Utc> },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("ledger corrupt at line {line}: {detail}")]
    Corrupt { line: usize, detail: String },
    #[error("ledger {0} is held by another writer")]
    Locked(PathBuf),
    #[error("ledger storage failure: {0}")]
    Storage(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub schema: u32,
    pub seq: u64,
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventKind {
    ProjectConfigured {
        project: Project,
        #[serde(default)]
        config_hash: String,
    },
    BaselineRecorded {
        record: ActivityRecord,
        #[serde(default)]
        overwrite: bool,
    },
    SessionStarted {
        session_id: String,
        versions: Vec<VersionEntry>,
        #[serde(default)]
        strategy: String,
    },
    VersionCheckedOut {
        index: usize,
        commit_id: String,
    },
    BuildVerified {
        index: usize,
        ok: bool,
        #[serde(default)]
        log_excerpt: String,
    },
    TestRun {
        record: TestRunRecord,
    },
    FailureClassified {
        index: usize,
        protocol: String,
        framework: String,
        failure: FailureKind,
    },
    ActivityStarted {
        activity_id: u64,
        category: ActivityCategory,
        index: usize,
        protocol: String,
        framework: Option<String>,
    },
    ActivityStopped {
        record: ActivityRecord,
    },
    BugRecorded {
        bug: BugRecord,
    },
    TestScriptUpdated {
        index: usize,
        protocol: String,
        framework: String,
        #[serde(default)]
        note: String,
    },
    VersionCompleted {
        index: usize,
    },
    SessionCompleted,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::ProjectConfigured { .. } => "ProjectConfigured",
            EventKind::BaselineRecorded { .. } => "BaselineRecorded",
            EventKind::SessionStarted { .. } => "SessionStarted",
            EventKind::VersionCheckedOut { .. } => "VersionCheckedOut",
            EventKind::BuildVerified { .. } => "BuildVerified",
            EventKind::TestRun { .. } => "TestRun",
            EventKind::FailureClassified { .. } => "FailureClassified",
            EventKind::ActivityStarted { .. } => "ActivityStarted",
            EventKind::ActivityStopped { .. } => "ActivityStopped",
            EventKind::BugRecorded { .. } => "BugRecorded",
            EventKind::TestScriptUpdated { .. } => "TestScriptUpdated",
            EventKind::VersionCompleted { .. } => "VersionCompleted",
            EventKind::SessionCompleted => "SessionCompleted",
        }
    }

    /// Payload-level checks that need no other event.
    pub fn validate(&self) -> Result<(), String> {
        let need_index = |i: usize| {
            if i == 0 {
                Err("version index must be >= 1".to_string())
            } else {
                Ok(())
            }
        };
        let need_id = |what: &str, s: &str| {
            if s.is_empty() {
                Err(format!("{what} must be nonempty"))
            } else {
                Ok(())
            }
        };
        match self {
            EventKind::ProjectConfigured { project, .. } => project.validate(),
            EventKind::BaselineRecorded { record, .. } => {
                if !matches!(record.category, ActivityCategory::ManualBaseline | ActivityCategory::Implementation) {
                    return Err("baseline records must be manual baseline or implementation".into());
                }
                if record.version_index != 0 {
                    return Err("baseline records belong to version index 0".into());
                }
                record.validate()
            }
            EventKind::SessionStarted { session_id, versions, .. } => {
                need_id("session id", session_id)?;
                if versions.is_empty() {
                    return Err("session needs at least one version".into());
                }
                for (i, v) in versions.iter().enumerate() {
                    if v.index != i + 1 {
                        return Err("version indices must run 1..m".into());
                    }
                    if v.commit.id.is_empty() {
                        return Err("version commit id must be nonempty".into());
                    }
                }
                if versions.windows(2).any(|w| w[1].calendar_time <= w[0].calendar_time) {
                    return Err("version calendar times must strictly increase".into());
                }
                Ok(())
            }
            EventKind::VersionCheckedOut { index, commit_id } => {
                need_index(*index)?;
                need_id("commit id", commit_id)
            }
            EventKind::BuildVerified { index, .. } | EventKind::VersionCompleted { index } => need_index(*index),
            EventKind::TestRun { record } => {
                need_index(record.version_index)?;
                need_id("protocol", &record.protocol)?;
                need_id("framework", &record.framework)?;
                if record.attempt == 0 {
                    return Err("attempt numbers start at 1".into());
                }
                Ok(())
            }
            EventKind::FailureClassified { index, protocol, framework, .. }
            | EventKind::TestScriptUpdated { index, protocol, framework, .. } => {
                need_index(*index)?;
                need_id("protocol", protocol)?;
                need_id("framework", framework)
            }
            EventKind::ActivityStarted { category, index, protocol, .. } => {
                need_id("protocol", protocol)?;
                if category.is_maintenance() {
                    need_index(*index)?;
                }
                Ok(())
            }
            EventKind::ActivityStopped { record } => record.validate(),
            EventKind::BugRecorded { bug } => {
                need_index(bug.version_index)?;
                need_id("bug description", &bug.description)
            }
            EventKind::SessionCompleted => Ok(()),
        }
    }
}

/// Parses one ledger line (without its newline).
pub fn parse_event_line(line: &str) -> Result<Event, String> {
    let event: Event = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if event.schema != SCHEMA_VERSION {
        return Err(format!("unsupported schema version {}", event.schema));
    }
    event.kind.validate()?;
    Ok(event)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLedger {
    pub events: Vec<Event>,
    /// Byte length of the well-formed prefix.
    pub valid_len: usize,
    /// A trailing partial line was found (and is not part of `events`).
    pub torn_tail: bool,
}

/// Parses a whole ledger file, checking contiguity and instant order.
pub fn parse_ledger(bytes: &[u8]) -> Result<ParsedLedger, LedgerError> {
    let mut events: Vec<Event> = Vec::new();
    let mut offset = 0usize;
    let mut line_no = 0usize;
    while offset < bytes.len() {
        line_no += 1;
        let rest = &bytes[offset..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Ok(ParsedLedger { events, valid_len: offset, torn_tail: true });
        };
        let raw = &rest[..nl];
        let corrupt = |detail: String| LedgerError::Corrupt { line: line_no, detail };
        let text = std::str::from_utf8(raw).map_err(|e| corrupt(e.to_string()))?;
        let event = parse_event_line(text).map_err(corrupt)?;
        let expected = events.len() as u64 + 1;
        if event.seq != expected {
            return Err(corrupt(format!("sequence {} where {expected} was expected", event.seq)));
        }
        if let Some(prev) = events.last() {
            if event.at < prev.at {
                return Err(corrupt("instant precedes the previous event".into()));
            }
        }
        events.push(event);
        offset += nl + 1;
    }
    Ok(ParsedLedger { events, valid_len: offset, torn_tail: false })
}

/// Single-writer handle on a ledger, optionally backed by a file.
#[derive(Debug)]
pub struct Ledger {
    path: Option<PathBuf>,
    file: Option<File>,
    events: Vec<Event>,
    recovered_torn_tail: bool,
}

impl Ledger {
    pub fn in_memory() -> Self {
        Ledger { path: None, file: None, events: Vec::new(), recovered_torn_tail: false }
    }

    /// Opens (creating if needed) the ledger at `path`, truncating a torn tail.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LedgerError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        match file.try_lock() {
            Ok(()) => {}
            Err(std::fs::TryLockError::WouldBlock) => return Err(LedgerError::Locked(path)),
            Err(std::fs::TryLockError::Error(e)) => return Err(e.into()),
        }
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let parsed = parse_ledger(&bytes)?;
        if parsed.torn_tail {
            file.set_len(parsed.valid_len as u64)?;
            file.sync_data()?;
        }
        file.seek(SeekFrom::End(0))?;
        Ok(Ledger { path: Some(path), file: Some(file), events: parsed.events, recovered_torn_tail: parsed.torn_tail })
    }

    /// Reads a ledger without taking a writable handle.
    pub fn read_only(path: impl AsRef<Path>) -> Result<Vec<Event>, LedgerError> {
        let bytes = std::fs::read(path)?;
        Ok(parse_ledger(&bytes)?.events)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn recovered_torn_tail(&self) -> bool {
        self.recovered_torn_tail
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn last_seq(&self) -> u64 {
        self.events.len() as u64
    }

    pub fn last_instant(&self) -> Option<DateTime<Utc>> {
        self.events.last().map(|e| e.at)
    }

    /// Immutable copy of the events up to and including `seq`.
    pub fn snapshot(&self, seq: u64) -> Vec<Event> {
        let n = (seq as usize).min(self.events.len());
        self.events[..n].to_vec()
    }

    pub fn append(&mut self, at: DateTime<Utc>, kind: EventKind) -> Result<u64, LedgerError> {
        if let Some(last) = self.last_instant() {
            if at < last {
                return Err(LedgerError::OutOfOrder { at, last });
            }
        }
        kind.validate().map_err(LedgerError::Schema)?;
        let event = Event { schema: SCHEMA_VERSION, seq: self.last_seq() + 1, at, kind };
        if let Some(file) = self.file.as_mut() {
            let mut line = serde_json::to_string(&event).map_err(|e| LedgerError::Schema(e.to_string()))?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
            file.sync_data()?;
        }
        let seq = event.seq;
        self.events.push(event);
        Ok(seq)
    }
}
