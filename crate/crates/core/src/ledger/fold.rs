use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{Event, EventKind};
use crate::history::VersionEntry;
use crate::model::{ActivityCategory, ActivityRecord, BugRecord, Project, TestKey, TestRunRecord};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryTotal {
    pub seconds: u64,
    pub occurrences: u64,
    /// Portion of the above coming from manually overridden durations.
    pub override_seconds: u64,
    pub override_occurrences: u64,
}

/// Which maintenance records count toward cost totals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaintenanceFilter {
    pub include_bug_time: bool,
    pub include_overrides: bool,
}

impl Default for MaintenanceFilter {
    fn default() -> Self {
        MaintenanceFilter { include_bug_time: true, include_overrides: true }
    }
}

impl MaintenanceFilter {
    pub fn admits(&self, r: &ActivityRecord) -> bool {
        r.category.is_maintenance()
            && (self.include_bug_time || r.category != ActivityCategory::HandleBug)
            && (self.include_overrides || !r.overridden)
    }

    pub fn seconds(&self, category: ActivityCategory, t: &CategoryTotal) -> u64 {
        if !self.include_bug_time && category == ActivityCategory::HandleBug {
            return 0;
        }
        if self.include_overrides {
            t.seconds
        } else {
            t.seconds - t.override_seconds
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenActivity {
    pub activity_id: u64,
    pub category: ActivityCategory,
    pub index: usize,
    pub protocol: String,
    pub framework: Option<String>,
    pub started_at: DateTime<Utc>,
}

/// Everything the statistics are computed from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasurementTables {
    pub last_seq: u64,
    pub project: Option<Project>,
    pub session_id: Option<String>,
    pub versions: Vec<VersionEntry>,
    /// protocol -> manual execution seconds
    pub baseline_manual: BTreeMap<String, u64>,
    /// framework -> protocol -> implementation seconds
    pub implementation: BTreeMap<String, BTreeMap<String, u64>>,
    /// framework -> version index -> category -> total
    pub maintenance: BTreeMap<String, BTreeMap<usize, BTreeMap<ActivityCategory, CategoryTotal>>>,
    /// Stopped maintenance activities in stop order.
    pub activities: Vec<ActivityRecord>,
    pub runs: Vec<TestRunRecord>,
    pub bugs: Vec<BugRecord>,
    /// Activities started but never stopped; excluded from every total.
    pub open_activities: Vec<OpenActivity>,
    /// Records that could not be attributed (e.g. version index outside the sequence).
    pub excluded: Vec<String>,
}

impl MeasurementTables {
    pub fn version_count(&self) -> usize {
        self.versions.len()
    }

    pub fn frameworks(&self) -> Vec<String> {
        if let Some(p) = &self.project {
            return p.frameworks.iter().map(|f| f.id.clone()).collect();
        }
        let mut ids: Vec<String> = self.implementation.keys().chain(self.maintenance.keys()).cloned().collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// Shortlisted protocols, in project order when known.
    pub fn protocols(&self) -> Vec<String> {
        if let Some(p) = &self.project {
            return p.selected_protocols().map(|p| p.id.clone()).collect();
        }
        let mut ids: Vec<String> =
            self.baseline_manual.keys().chain(self.implementation.values().flat_map(|m| m.keys())).cloned().collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn implementation_seconds(&self, key: &TestKey) -> Option<u64> {
        self.implementation.get(&key.framework)?.get(&key.protocol).copied()
    }

    /// Baseline records still missing before a replay can start.
    pub fn missing_baseline(&self) -> Vec<String> {
        let mut missing = Vec::new();
        for p in self.protocols() {
            if !self.baseline_manual.contains_key(&p) {
                missing.push(format!("manual baseline for {p}"));
            }
        }
        for f in self.frameworks() {
            for p in self.protocols() {
                if self.implementation_seconds(&TestKey::new(&p, &f)).is_none() {
                    missing.push(format!("implementation of {p} with {f}"));
                }
            }
        }
        missing
    }

    pub fn maintenance_seconds(&self, framework: &str, index: usize, filter: &MaintenanceFilter) -> u64 {
        self.maintenance
            .get(framework)
            .and_then(|m| m.get(&index))
            .map(|cats| cats.iter().map(|(c, t)| filter.seconds(*c, t)).sum())
            .unwrap_or(0)
    }

    /// Total manual session cost in seconds over the shortlist.
    pub fn manual_session_seconds(&self) -> u64 {
        self.baseline_manual.values().sum()
    }
}

/// Incremental left fold over ledger events. Serializable so a snapshot of
/// the fold can be stored and resumed with the tail of the log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Folder {
    tables: MeasurementTables,
    open: BTreeMap<u64, OpenActivity>,
}

impl Folder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn apply_all<'a>(&mut self, events: impl IntoIterator<Item = &'a Event>) {
        for e in events {
            self.apply(e);
        }
    }

    pub fn apply(&mut self, event: &Event) {
        let t = &mut self.tables;
        t.last_seq = event.seq;
        match &event.kind {
            EventKind::ProjectConfigured { project, .. } => t.project = Some(project.clone()),
            EventKind::BaselineRecorded { record, .. } => match record.category {
                ActivityCategory::ManualBaseline => {
                    t.baseline_manual.insert(record.protocol.clone(), record.duration_s);
                }
                ActivityCategory::Implementation => {
                    let fw = record.framework.clone().unwrap_or_default();
                    t.implementation.entry(fw).or_default().insert(record.protocol.clone(), record.duration_s);
                }
                _ => t.excluded.push(format!("seq {}: non-baseline category in baseline record", event.seq)),
            },
            EventKind::SessionStarted { session_id, versions, .. } => {
                t.session_id = Some(session_id.clone());
                t.versions = versions.clone();
            }
            EventKind::ActivityStarted { activity_id, category, index, protocol, framework } => {
                self.open.insert(
                    *activity_id,
                    OpenActivity {
                        activity_id: *activity_id,
                        category: *category,
                        index: *index,
                        protocol: protocol.clone(),
                        framework: framework.clone(),
                        started_at: event.at,
                    },
                );
            }
            EventKind::ActivityStopped { record } => {
                self.open.remove(&record.activity_id);
                if !record.category.is_maintenance() {
                    // timed baseline work arrives as BaselineRecorded
                    return;
                }
                let m = t.versions.len();
                if record.version_index == 0 || record.version_index > m {
                    t.excluded.push(format!(
                        "seq {}: activity {} at version {} outside 1..={m}",
                        event.seq, record.activity_id, record.version_index
                    ));
                    return;
                }
                let fw = record.framework.clone().unwrap_or_default();
                let total = t
                    .maintenance
                    .entry(fw)
                    .or_default()
                    .entry(record.version_index)
                    .or_default()
                    .entry(record.category)
                    .or_default();
                total.seconds += record.duration_s;
                total.occurrences += 1;
                if record.overridden {
                    total.override_seconds += record.duration_s;
                    total.override_occurrences += 1;
                }
                t.activities.push(record.clone());
            }
            EventKind::TestRun { record } => t.runs.push(record.clone()),
            EventKind::BugRecorded { bug } => t.bugs.push(bug.clone()),
            EventKind::VersionCheckedOut { .. }
            | EventKind::BuildVerified { .. }
            | EventKind::FailureClassified { .. }
            | EventKind::TestScriptUpdated { .. }
            | EventKind::VersionCompleted { .. }
            | EventKind::SessionCompleted => {}
        }
    }

    /// Tables so far, with still-open activities surfaced.
    pub fn tables(&self) -> MeasurementTables {
        let mut t = self.tables.clone();
        t.open_activities = self.open.values().cloned().collect();
        t
    }

    pub fn finish(self) -> MeasurementTables {
        let mut t = self.tables;
        t.open_activities = self.open.into_values().collect();
        t
    }
}

/// Pure, deterministic fold of a ledger prefix into measurement tables.
pub fn fold_events(events: &[Event]) -> MeasurementTables {
    let mut f = Folder::new();
    f.apply_all(events);
    f.finish()
}
