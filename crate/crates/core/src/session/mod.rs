//! The replay as a state machine: baseline and implementation recording, then
//! the per-version loop of checkout, build, test runs, failure classification
//! and timed maintenance.
//!
//! Every operation validates against [`SessionState`], appends its events to
//! the ledger and applies them to the in-memory state through the same
//! reducer used to rebuild the state from a ledger file.

mod clock;
mod host;
mod state;
#[cfg(test)]
mod tests;

use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::ExecError;
use crate::history::{HistoryError, VersionSequence, WorkspaceState};
use crate::ledger::{Event, EventKind, Ledger, LedgerError};
use crate::model::{
    ActivityCategory, ActivityRecord, BugRecord, BugResolution, FailureKind, Outcome, Project, TestKey, TestRunRecord,
};

pub use clock::{Clock, ManualClock, SystemClock};
pub use host::{GitHost, ReplayHost, ScriptedHost, TestExecution};
pub use state::{ActiveTimer, Phase, SessionState, StoppedActivity, TestStatus};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("operation needs the {expected} phase (session is in {actual})")]
    WrongPhase { expected: &'static str, actual: String },
    #[error("no project has been configured")]
    NotConfigured,
    #[error("project configuration is locked once the replay has started")]
    ProjectLocked,
    #[error("invalid project: {0}")]
    InvalidProject(String),
    #[error("unknown or unselected protocol `{0}`")]
    UnknownProtocol(String),
    #[error("unknown automated test {0}")]
    UnknownTest(TestKey),
    #[error("{0} is already recorded (pass overwrite to replace it)")]
    DuplicateBaseline(String),
    #[error("baseline incomplete, missing: {}", .0.join(", "))]
    IncompleteBaseline(Vec<String>),
    #[error("version {0} has no successful build verification")]
    BuildNotVerified(usize),
    #[error("{0} failed and must be classified first")]
    AwaitingClassification(TestKey),
    #[error("{0} has no failing attempt to classify")]
    NoFailingAttempt(TestKey),
    #[error("{0} has not been run at this version")]
    NoAttempt(TestKey),
    #[error("timer {0} is already running")]
    TimerActive(u64),
    #[error("no timer is running")]
    NoActiveTimer,
    #[error("timer {given} is not the running timer ({running})")]
    TimerMismatch { given: u64, running: u64 },
    #[error("category {category} cannot be timed in the {phase} phase")]
    CategoryNotAllowed { category: ActivityCategory, phase: String },
    #[error("version blocked: {}", .0.join("; "))]
    Blocked(Vec<String>),
    #[error("activity {0} is not a handle_bug activity stopped at this version")]
    NotABugActivity(u64),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("test command failed to start: {0}")]
    Exec(#[from] ExecError),
}

fn phase_name(p: &Phase) -> String {
    match p {
        Phase::Baseline => "baseline".into(),
        Phase::Replay { index, .. } => format!("replay (version {index})"),
        Phase::Completed => "completed".into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimerHandle {
    pub activity_id: u64,
}

/// What the tester must do after classifying a failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequiredActions {
    pub kind: FailureKind,
    pub activities: Vec<ActivityCategory>,
    pub bug_record: bool,
    pub script_update: bool,
    /// Crashes re-run automatically when their activity stops.
    pub automatic_rerun: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopOutcome {
    pub record: ActivityRecord,
    pub rerun: Option<TestRunRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum AdvanceOutcome {
    Advanced { index: usize, build_ok: bool },
    Completed,
}

pub struct Session {
    ledger: Ledger,
    state: SessionState,
    host: Box<dyn ReplayHost>,
    clock: Box<dyn Clock>,
    /// (activity id, monotonic start) for a timer started by this process.
    timer_mono: Option<(u64, Duration)>,
}

impl Session {
    /// Rebuilds the session from `ledger`.
    pub fn new(ledger: Ledger, host: Box<dyn ReplayHost>, clock: Box<dyn Clock>) -> Self {
        let state = SessionState::from_events(ledger.events());
        Session { ledger, state, host, clock, timer_mono: None }
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn events(&self) -> &[Event] {
        self.ledger.events()
    }

    pub fn into_ledger(self) -> Ledger {
        self.ledger
    }

    fn now(&self) -> DateTime<Utc> {
        let wall = self.clock.wall();
        match self.ledger.last_instant() {
            Some(last) if last > wall => last,
            _ => wall,
        }
    }

    fn emit(&mut self, kind: EventKind) -> Result<u64, SessionError> {
        let at = self.now();
        let seq = self.ledger.append(at, kind)?;
        let event = self.ledger.events().last().expect("just appended");
        self.state.apply(event);
        Ok(seq)
    }

    fn project(&self) -> Result<&Project, SessionError> {
        self.state.project.as_ref().ok_or(SessionError::NotConfigured)
    }

    fn require_baseline_phase(&self) -> Result<(), SessionError> {
        if self.state.phase != Phase::Baseline {
            return Err(SessionError::WrongPhase { expected: "baseline", actual: phase_name(&self.state.phase) });
        }
        Ok(())
    }

    fn require_replay(&self) -> Result<usize, SessionError> {
        self.state
            .current_index()
            .ok_or_else(|| SessionError::WrongPhase { expected: "replay", actual: phase_name(&self.state.phase) })
    }

    fn check_test(&self, key: &TestKey) -> Result<(), SessionError> {
        let p = self.project()?;
        let selected = p.protocol(&key.protocol).is_some_and(|t| t.selected);
        if !selected || p.test(key).is_none() {
            return Err(SessionError::UnknownTest(key.clone()));
        }
        Ok(())
    }

    pub fn configure(&mut self, project: Project, config_hash: &str) -> Result<u64, SessionError> {
        self.require_baseline_phase().map_err(|_| SessionError::ProjectLocked)?;
        project.validate().map_err(SessionError::InvalidProject)?;
        if self.state.project.as_ref() == Some(&project) {
            return Ok(self.state.last_seq);
        }
        self.emit(EventKind::ProjectConfigured { project, config_hash: config_hash.to_string() })
    }

    fn baseline_record(
        &self,
        category: ActivityCategory,
        protocol: &str,
        framework: Option<&str>,
        duration_s: u64,
        note: String,
    ) -> ActivityRecord {
        let stopped_at = self.now();
        ActivityRecord {
            activity_id: self.state.last_seq + 1,
            session_id: self.state.session_id.clone().unwrap_or_default(),
            version_index: 0,
            protocol: protocol.to_string(),
            framework: framework.map(str::to_string),
            category,
            started_at: stopped_at - chrono::Duration::seconds(duration_s as i64),
            stopped_at,
            duration_s,
            overridden: false,
            note,
        }
    }

    /// Records the time to run `protocol` by hand on the first version.
    pub fn record_manual_baseline(
        &mut self,
        protocol: &str,
        duration_s: u64,
        overwrite: bool,
    ) -> Result<ActivityRecord, SessionError> {
        self.require_baseline_phase()?;
        let p = self.project()?;
        if !p.protocol(protocol).is_some_and(|t| t.selected) {
            return Err(SessionError::UnknownProtocol(protocol.to_string()));
        }
        if !overwrite && self.state.baseline_manual.contains(protocol) {
            return Err(SessionError::DuplicateBaseline(format!("manual baseline for {protocol}")));
        }
        let note = if duration_s == 0 { "warning: zero duration".to_string() } else { String::new() };
        let record = self.baseline_record(ActivityCategory::ManualBaseline, protocol, None, duration_s, note);
        self.emit(EventKind::BaselineRecorded { record: record.clone(), overwrite })?;
        Ok(record)
    }

    pub fn record_implementation(
        &mut self,
        key: &TestKey,
        duration_s: u64,
        overwrite: bool,
    ) -> Result<ActivityRecord, SessionError> {
        self.require_baseline_phase()?;
        self.check_test(key)?;
        if !overwrite && self.state.implementation.contains(key) {
            return Err(SessionError::DuplicateBaseline(format!("implementation of {key}")));
        }
        let record = self.baseline_record(
            ActivityCategory::Implementation,
            &key.protocol,
            Some(&key.framework),
            duration_s,
            String::new(),
        );
        self.emit(EventKind::BaselineRecorded { record: record.clone(), overwrite })?;
        Ok(record)
    }

    pub fn missing_baseline(&self) -> Vec<String> {
        self.state.missing_baseline()
    }

    /// Starts the replay and prepares version 1 (checkout + build).
    pub fn start_replay(&mut self, versions: &VersionSequence, force: bool) -> Result<SessionState, SessionError> {
        self.require_baseline_phase()?;
        let missing = self.missing_baseline();
        if !missing.is_empty() {
            return Err(SessionError::IncompleteBaseline(missing));
        }
        if let Some(t) = &self.state.active_timer {
            return Err(SessionError::TimerActive(t.activity_id));
        }
        let now = self.now();
        self.emit(EventKind::SessionStarted {
            session_id: format!("s{}", now.format("%Y%m%dT%H%M%S")),
            versions: versions.entries.clone(),
            strategy: versions.strategy.kind.to_string(),
        })?;
        self.prepare_version(force)?;
        Ok(self.state.clone())
    }

    fn workspace(&self) -> Option<WorkspaceState> {
        let (index, commit_id) = self.state.checked_out.clone()?;
        Some(WorkspaceState {
            path: std::path::PathBuf::new(),
            index,
            commit_id,
            checked_out_at: self.state.last_at.unwrap_or_else(Utc::now),
        })
    }

    /// Checks out the current version if needed, then (re-)verifies its build.
    pub fn prepare_version(&mut self, force: bool) -> Result<bool, SessionError> {
        let index = self.require_replay()?;
        let entry = self
            .state
            .versions
            .get(index - 1)
            .cloned()
            .ok_or(HistoryError::IndexOutOfRange { index, len: self.state.versions.len() })?;
        let needs_checkout = self.state.checked_out.as_ref().map(|(i, _)| *i) != Some(index);
        let ws = if needs_checkout {
            let ws = self.host.checkout(&entry, force)?;
            self.emit(EventKind::VersionCheckedOut { index, commit_id: ws.commit_id.clone() })?;
            ws
        } else {
            self.workspace().expect("checked out")
        };
        let result = self.host.verify_build(&ws)?;
        let ok = result.is_ok();
        let log_excerpt = match result {
            crate::history::BuildResult::Failed { log_excerpt } => log_excerpt,
            crate::history::BuildResult::Ok => String::new(),
        };
        self.emit(EventKind::BuildVerified { index, ok, log_excerpt })?;
        Ok(ok)
    }

    /// Runs one automated test at the current version.
    pub fn run_test(&mut self, key: &TestKey) -> Result<TestRunRecord, SessionError> {
        let index = self.require_replay()?;
        self.check_test(key)?;
        if self.state.build_ok != Some(true) {
            return Err(SessionError::BuildNotVerified(index));
        }
        let status = self.state.tests.get(key).cloned().unwrap_or_default();
        if status.awaiting_classification {
            return Err(SessionError::AwaitingClassification(key.clone()));
        }
        let test = self.project()?.test(key).cloned().expect("checked");
        let ws = self.workspace().ok_or(SessionError::BuildNotVerified(index))?;
        let exec = self.host.run_test(&ws, &test)?;
        let record = TestRunRecord {
            version_index: index,
            protocol: key.protocol.clone(),
            framework: key.framework.clone(),
            outcome: exec.outcome,
            attempt: status.attempts + 1,
            elapsed_ms: exec.elapsed_ms,
            note: exec.note,
        };
        self.emit(EventKind::TestRun { record: record.clone() })?;
        Ok(record)
    }

    /// Runs every test that has not yet passed at this version, in replay
    /// order, stopping at the first failure.
    pub fn run_pending(&mut self) -> Result<Vec<TestRunRecord>, SessionError> {
        let mut out = Vec::new();
        for key in self.state.not_passing() {
            let r = self.run_test(&key)?;
            let failed = r.outcome == Outcome::Fail;
            out.push(r);
            if failed {
                break;
            }
        }
        Ok(out)
    }

    pub fn classify_failure(&mut self, key: &TestKey, kind: FailureKind) -> Result<RequiredActions, SessionError> {
        let index = self.require_replay()?;
        self.check_test(key)?;
        let status = self.state.tests.get(key).cloned().unwrap_or_default();
        if kind.requires_failing_attempt() {
            if !(status.last == Some(Outcome::Fail) && status.awaiting_classification) {
                return Err(SessionError::NoFailingAttempt(key.clone()));
            }
        } else if status.attempts == 0 {
            return Err(SessionError::NoAttempt(key.clone()));
        }
        self.emit(EventKind::FailureClassified {
            index,
            protocol: key.protocol.clone(),
            framework: key.framework.clone(),
            failure: kind,
        })?;
        Ok(RequiredActions {
            kind,
            activities: kind.activities().to_vec(),
            bug_record: kind == FailureKind::Bug,
            script_update: kind == FailureKind::BrokenTest,
            automatic_rerun: kind == FailureKind::Crash,
        })
    }

    pub fn start_activity(&mut self, category: ActivityCategory, key: &TestKey) -> Result<TimerHandle, SessionError> {
        if let Some(t) = &self.state.active_timer {
            return Err(SessionError::TimerActive(t.activity_id));
        }
        let index = match (category, &self.state.phase) {
            (c, Phase::Replay { index, .. }) if c.is_maintenance() => *index,
            (ActivityCategory::Implementation | ActivityCategory::ManualBaseline, Phase::Baseline) => 0,
            (c, p) => return Err(SessionError::CategoryNotAllowed { category: c, phase: phase_name(p) }),
        };
        let framework = if category == ActivityCategory::ManualBaseline {
            if !self.project()?.protocol(&key.protocol).is_some_and(|t| t.selected) {
                return Err(SessionError::UnknownProtocol(key.protocol.clone()));
            }
            None
        } else {
            self.check_test(key)?;
            Some(key.framework.clone())
        };
        let activity_id = self.state.last_seq + 1;
        self.emit(EventKind::ActivityStarted {
            activity_id,
            category,
            index,
            protocol: key.protocol.clone(),
            framework,
        })?;
        self.timer_mono = Some((activity_id, self.clock.monotonic()));
        Ok(TimerHandle { activity_id })
    }

    /// Stops the running timer. Durations come from the monotonic clock when
    /// the timer was started by this process, otherwise from wall-clock
    /// instants. `override_s` replaces the measured duration and is flagged.
    pub fn stop_activity(
        &mut self,
        handle: Option<TimerHandle>,
        note: &str,
        override_s: Option<u64>,
    ) -> Result<StopOutcome, SessionError> {
        let timer = self.state.active_timer.clone().ok_or(SessionError::NoActiveTimer)?;
        if let Some(h) = handle {
            if h.activity_id != timer.activity_id {
                return Err(SessionError::TimerMismatch { given: h.activity_id, running: timer.activity_id });
            }
        }
        let mut note = note.to_string();
        let measured_ms: i64 = match self.timer_mono {
            Some((id, start)) if id == timer.activity_id => {
                self.clock.monotonic().saturating_sub(start).as_millis() as i64
            }
            _ => {
                if !note.is_empty() {
                    note.push_str("; ");
                }
                note.push_str("duration from wall clock");
                (self.now() - timer.started_at).num_milliseconds().max(0)
            }
        };
        let measured_s = ((measured_ms as f64) / 1000.0).round() as u64;
        let stopped_at = timer.started_at + chrono::Duration::milliseconds(measured_ms);
        let (duration_s, overridden) = match override_s {
            Some(s) => (s, true),
            None => (measured_s, false),
        };
        let record = ActivityRecord {
            activity_id: timer.activity_id,
            session_id: self.state.session_id.clone().unwrap_or_default(),
            version_index: timer.index,
            protocol: timer.protocol.clone(),
            framework: timer.framework.clone(),
            category: timer.category,
            started_at: timer.started_at,
            stopped_at,
            duration_s,
            overridden,
            note,
        };
        self.emit(EventKind::ActivityStopped { record: record.clone() })?;
        self.timer_mono = None;

        let mut rerun = None;
        match timer.category {
            ActivityCategory::Implementation | ActivityCategory::ManualBaseline => {
                self.emit(EventKind::BaselineRecorded { record: record.clone(), overwrite: true })?;
            }
            ActivityCategory::RepairBrokenTest => {
                self.emit(EventKind::TestScriptUpdated {
                    index: timer.index,
                    protocol: timer.protocol.clone(),
                    framework: timer.framework.clone().unwrap_or_default(),
                    note: record.note.clone(),
                })?;
            }
            ActivityCategory::HandleCrash => {
                let key = TestKey::new(&timer.protocol, timer.framework.as_deref().unwrap_or_default());
                rerun = Some(self.run_test(&key)?);
            }
            _ => {}
        }
        Ok(StopOutcome { record, rerun })
    }

    pub fn record_bug(
        &mut self,
        activity_id: u64,
        description: &str,
        resolution: BugResolution,
    ) -> Result<BugRecord, SessionError> {
        let index = self.require_replay()?;
        match self.state.stopped_here.get(&activity_id) {
            Some(a) if a.category == ActivityCategory::HandleBug => {}
            _ => return Err(SessionError::NotABugActivity(activity_id)),
        }
        if description.trim().is_empty() {
            return Err(SessionError::Invalid("bug description must be nonempty".into()));
        }
        let bug = BugRecord { version_index: index, description: description.to_string(), resolution, activity_id };
        self.emit(EventKind::BugRecorded { bug: bug.clone() })?;
        Ok(bug)
    }

    /// Reasons the current version cannot be completed yet.
    pub fn blockers(&self) -> Vec<String> {
        self.state.blockers()
    }

    pub fn advance_version(&mut self, force: bool) -> Result<AdvanceOutcome, SessionError> {
        let index = self.require_replay()?;
        let blockers = self.blockers();
        if !blockers.is_empty() {
            return Err(SessionError::Blocked(blockers));
        }
        self.emit(EventKind::VersionCompleted { index })?;
        if index >= self.state.versions.len() {
            self.emit(EventKind::SessionCompleted)?;
            return Ok(AdvanceOutcome::Completed);
        }
        let next = index + 1;
        let build_ok = self.prepare_version(force)?;
        Ok(AdvanceOutcome::Advanced { index: next, build_ok })
    }
}
