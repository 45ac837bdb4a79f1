use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::history::VersionEntry;
use crate::ledger::{Event, EventKind};
use crate::model::{ActivityCategory, FailureKind, Outcome, Project, TestKey};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Phase {
    Baseline,
    Replay { index: usize, cursor: Option<TestKey> },
    Completed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveTimer {
    pub activity_id: u64,
    pub category: ActivityCategory,
    pub index: usize,
    pub protocol: String,
    pub framework: Option<String>,
    pub started_at: DateTime<Utc>,
}

/// Status of one automated test at the current version.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestStatus {
    pub attempts: u32,
    pub last: Option<Outcome>,
    pub awaiting_classification: bool,
    pub classifications: Vec<FailureKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoppedActivity {
    pub category: ActivityCategory,
    pub protocol: String,
    pub framework: Option<String>,
}

/// Session state, reconstructible from the ledger alone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub phase: Phase,
    pub project: Option<Project>,
    pub session_id: Option<String>,
    pub versions: Vec<VersionEntry>,
    pub baseline_manual: BTreeSet<String>,
    pub implementation: BTreeSet<TestKey>,
    pub active_timer: Option<ActiveTimer>,
    /// (index, commit id) currently in the workspace.
    pub checked_out: Option<(usize, String)>,
    /// Outcome of the latest build verification of the checked-out version.
    pub build_ok: Option<bool>,
    pub tests: BTreeMap<TestKey, TestStatus>,
    /// Bug classifications at the current version still lacking a bug record.
    pub pending_bugs: BTreeSet<TestKey>,
    /// Maintenance activities stopped at the current version.
    pub stopped_here: BTreeMap<u64, StoppedActivity>,
    pub completed_versions: usize,
    pub last_seq: u64,
    pub last_at: Option<DateTime<Utc>>,
}

impl Default for SessionState {
    fn default() -> Self {
        SessionState {
            phase: Phase::Baseline,
            project: None,
            session_id: None,
            versions: Vec::new(),
            baseline_manual: BTreeSet::new(),
            implementation: BTreeSet::new(),
            active_timer: None,
            checked_out: None,
            build_ok: None,
            tests: BTreeMap::new(),
            pending_bugs: BTreeSet::new(),
            stopped_here: BTreeMap::new(),
            completed_versions: 0,
            last_seq: 0,
            last_at: None,
        }
    }
}

impl SessionState {
    pub fn from_events(events: &[Event]) -> Self {
        let mut s = SessionState::default();
        for e in events {
            s.apply(e);
        }
        s
    }

    pub fn current_index(&self) -> Option<usize> {
        match self.phase {
            Phase::Replay { index, .. } => Some(index),
            _ => None,
        }
    }

    /// Replay order of the automated tests.
    pub fn test_order(&self) -> Vec<TestKey> {
        self.project.as_ref().map(|p| p.replay_tests().iter().map(|t| t.key()).collect()).unwrap_or_default()
    }

    /// Tests whose latest attempt at the current version is not a pass.
    pub fn not_passing(&self) -> Vec<TestKey> {
        self.test_order()
            .into_iter()
            .filter(|k| self.tests.get(k).and_then(|s| s.last) != Some(Outcome::Pass))
            .collect()
    }

    /// Baseline records (and automations) still needed before the replay.
    pub fn missing_baseline(&self) -> Vec<String> {
        let Some(p) = &self.project else {
            return vec!["project configuration".into()];
        };
        let mut missing = Vec::new();
        for t in p.selected_protocols() {
            if !self.baseline_manual.contains(&t.id) {
                missing.push(format!("manual baseline for {}", t.id));
            }
        }
        for key in p.required_pairs() {
            if p.test(&key).is_none() {
                missing.push(format!("automated test {key}"));
            } else if !self.implementation.contains(&key) {
                missing.push(format!("implementation of {key}"));
            }
        }
        missing
    }

    /// Reasons the current version cannot be completed yet.
    pub fn blockers(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(t) = &self.active_timer {
            out.push(format!("timer {} is still running", t.activity_id));
        }
        if self.build_ok != Some(true) {
            out.push("build not verified".into());
        }
        for key in self.not_passing() {
            let st = self.tests.get(&key).cloned().unwrap_or_default();
            let why = match st.last {
                None => "not run",
                Some(_) if st.awaiting_classification => "failed, awaiting classification",
                Some(_) => "failed, needs a passing re-run",
            };
            out.push(format!("{key}: {why}"));
        }
        for key in &self.pending_bugs {
            out.push(format!("{key}: bug classified but not recorded"));
        }
        out
    }

    fn reset_version(&mut self) {
        self.tests = self.test_order().into_iter().map(|k| (k, TestStatus::default())).collect();
        self.pending_bugs.clear();
        self.stopped_here.clear();
        self.build_ok = None;
    }

    fn refresh_cursor(&mut self) {
        if let Phase::Replay { index, .. } = self.phase {
            let cursor = self.not_passing().into_iter().next();
            self.phase = Phase::Replay { index, cursor };
        }
    }

    pub fn apply(&mut self, event: &Event) {
        self.last_seq = event.seq;
        self.last_at = Some(event.at);
        match &event.kind {
            EventKind::ProjectConfigured { project, .. } => {
                self.project = Some(project.clone());
            }
            EventKind::BaselineRecorded { record, .. } => match record.category {
                ActivityCategory::ManualBaseline => {
                    self.baseline_manual.insert(record.protocol.clone());
                }
                ActivityCategory::Implementation => {
                    if let Some(fw) = &record.framework {
                        self.implementation.insert(TestKey::new(&record.protocol, fw));
                    }
                }
                _ => {}
            },
            EventKind::SessionStarted { session_id, versions, .. } => {
                self.session_id = Some(session_id.clone());
                self.versions = versions.clone();
                self.phase = Phase::Replay { index: 1, cursor: None };
                self.checked_out = None;
                self.reset_version();
            }
            EventKind::VersionCheckedOut { index, commit_id } => {
                let changed = self.checked_out.as_ref().map(|(i, _)| *i) != Some(*index);
                self.checked_out = Some((*index, commit_id.clone()));
                if changed {
                    self.phase = Phase::Replay { index: *index, cursor: None };
                    self.reset_version();
                }
                self.build_ok = None;
            }
            EventKind::BuildVerified { ok, .. } => self.build_ok = Some(*ok),
            EventKind::TestRun { record } => {
                let st = self.tests.entry(record.key()).or_default();
                st.attempts = record.attempt;
                st.last = Some(record.outcome);
                st.awaiting_classification = record.outcome == Outcome::Fail;
            }
            EventKind::FailureClassified { protocol, framework, failure, .. } => {
                let key = TestKey::new(protocol, framework);
                let st = self.tests.entry(key.clone()).or_default();
                st.awaiting_classification = false;
                st.classifications.push(*failure);
                if *failure == FailureKind::Bug {
                    self.pending_bugs.insert(key);
                }
            }
            EventKind::ActivityStarted { activity_id, category, index, protocol, framework } => {
                self.active_timer = Some(ActiveTimer {
                    activity_id: *activity_id,
                    category: *category,
                    index: *index,
                    protocol: protocol.clone(),
                    framework: framework.clone(),
                    started_at: event.at,
                });
            }
            EventKind::ActivityStopped { record } => {
                if self.active_timer.as_ref().map(|t| t.activity_id) == Some(record.activity_id) {
                    self.active_timer = None;
                }
                if record.category.is_maintenance() {
                    self.stopped_here.insert(
                        record.activity_id,
                        StoppedActivity {
                            category: record.category,
                            protocol: record.protocol.clone(),
                            framework: record.framework.clone(),
                        },
                    );
                }
            }
            EventKind::BugRecorded { bug } => {
                if let Some(a) = self.stopped_here.get(&bug.activity_id) {
                    if let Some(fw) = &a.framework {
                        self.pending_bugs.remove(&TestKey::new(&a.protocol, fw));
                    }
                }
            }
            EventKind::TestScriptUpdated { .. } => {}
            EventKind::VersionCompleted { index } => {
                self.completed_versions += 1;
                if *index < self.versions.len() {
                    self.phase = Phase::Replay { index: index + 1, cursor: None };
                    self.reset_version();
                }
            }
            EventKind::SessionCompleted => {
                self.phase = Phase::Completed;
            }
        }
        self.refresh_cursor();
    }
}
