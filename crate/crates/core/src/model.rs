//! Domain types shared by the session, ledger and estimator.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::exec::CommandSpec;

/// A documented manual test case. `selected` marks membership of the shortlist
/// that gets automated and replayed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestProtocol {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_true")]
    pub selected: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameworkId {
    pub id: String,
    pub name: String,
}

/// One automation of one protocol with one framework.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutomatedTestRef {
    pub protocol: String,
    pub framework: String,
    pub run_command: CommandSpec,
    #[serde(default)]
    pub script_locator: Option<String>,
}

impl AutomatedTestRef {
    pub fn key(&self) -> TestKey {
        TestKey::new(&self.protocol, &self.framework)
    }
}

/// (protocol, framework) pair identifying an automated test. Serialized as
/// `PROTOCOL/FRAMEWORK`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TestKey {
    pub protocol: String,
    pub framework: String,
}

impl TestKey {
    pub fn new(protocol: &str, framework: &str) -> Self {
        Self { protocol: protocol.to_string(), framework: framework.to_string() }
    }
}

impl fmt::Display for TestKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.protocol, self.framework)
    }
}

impl FromStr for TestKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('/') {
            Some((p, f)) if !p.is_empty() && !f.is_empty() && !f.contains('/') => Ok(TestKey::new(p, f)),
            _ => Err(format!("test `{s}` must be PROTOCOL/FRAMEWORK")),
        }
    }
}

impl Serialize for TestKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TestKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The project under study: shortlisted protocols, frameworks and their automations.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Project {
    pub name: String,
    pub protocols: Vec<TestProtocol>,
    pub frameworks: Vec<FrameworkId>,
    pub tests: Vec<AutomatedTestRef>,
}

impl Project {
    pub fn selected_protocols(&self) -> impl Iterator<Item = &TestProtocol> {
        self.protocols.iter().filter(|p| p.selected)
    }

    pub fn protocol(&self, id: &str) -> Option<&TestProtocol> {
        self.protocols.iter().find(|p| p.id == id)
    }

    pub fn framework(&self, id: &str) -> Option<&FrameworkId> {
        self.frameworks.iter().find(|f| f.id == id)
    }

    pub fn test(&self, key: &TestKey) -> Option<&AutomatedTestRef> {
        self.tests.iter().find(|t| t.protocol == key.protocol && t.framework == key.framework)
    }

    /// Checks id uniqueness and that every automated test references known ids.
    pub fn validate(&self) -> Result<(), String> {
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.protocols {
            if p.id.is_empty() || p.id.contains('/') {
                return Err(format!("protocol id `{}` must be nonempty and free of `/`", p.id));
            }
            if !seen.insert(p.id.as_str()) {
                return Err(format!("duplicate protocol id `{}`", p.id));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for f in &self.frameworks {
            if f.id.is_empty() || f.id.contains('/') {
                return Err(format!("framework id `{}` must be nonempty and free of `/`", f.id));
            }
            if !seen.insert(f.id.as_str()) {
                return Err(format!("duplicate framework id `{}`", f.id));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.tests {
            if self.protocol(&t.protocol).is_none() {
                return Err(format!("test references unknown protocol `{}`", t.protocol));
            }
            if self.framework(&t.framework).is_none() {
                return Err(format!("test references unknown framework `{}`", t.framework));
            }
            if !seen.insert(t.key()) {
                return Err(format!("duplicate automated test {}", t.key()));
            }
        }
        Ok(())
    }

    /// Every (selected protocol, framework) pair, in declaration order.
    pub fn required_pairs(&self) -> Vec<TestKey> {
        let mut out = Vec::new();
        for p in self.selected_protocols() {
            for f in &self.frameworks {
                out.push(TestKey::new(&p.id, &f.id));
            }
        }
        out
    }

    /// The automated tests of the shortlist, in replay order.
    pub fn replay_tests(&self) -> Vec<&AutomatedTestRef> {
        self.required_pairs().iter().filter_map(|k| self.test(k)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivityCategory {
    AnalysisBrokenTest,
    RepairBrokenTest,
    HandleBug,
    HandleFalseNegative,
    HandleCrash,
    Implementation,
    ManualBaseline,
}

impl ActivityCategory {
    pub const MAINTENANCE: [ActivityCategory; 5] = [
        ActivityCategory::AnalysisBrokenTest,
        ActivityCategory::RepairBrokenTest,
        ActivityCategory::HandleBug,
        ActivityCategory::HandleFalseNegative,
        ActivityCategory::HandleCrash,
    ];

    pub fn is_maintenance(self) -> bool {
        Self::MAINTENANCE.contains(&self)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActivityCategory::AnalysisBrokenTest => "analysis_broken_test",
            ActivityCategory::RepairBrokenTest => "repair_broken_test",
            ActivityCategory::HandleBug => "handle_bug",
            ActivityCategory::HandleFalseNegative => "handle_false_negative",
            ActivityCategory::HandleCrash => "handle_crash",
            ActivityCategory::Implementation => "implementation",
            ActivityCategory::ManualBaseline => "manual_baseline",
        }
    }

    /// Row label used in maintenance tables.
    pub fn label(self) -> &'static str {
        match self {
            ActivityCategory::AnalysisBrokenTest => "Analysis broken tests",
            ActivityCategory::RepairBrokenTest => "Repairing broken tests",
            ActivityCategory::HandleBug => "Handling found bugs",
            ActivityCategory::HandleFalseNegative => "Handling false negatives",
            ActivityCategory::HandleCrash => "Handling crashes",
            ActivityCategory::Implementation => "Implementation",
            ActivityCategory::ManualBaseline => "Manual baseline",
        }
    }
}

impl fmt::Display for ActivityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActivityCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let all = [
            ActivityCategory::AnalysisBrokenTest,
            ActivityCategory::RepairBrokenTest,
            ActivityCategory::HandleBug,
            ActivityCategory::HandleFalseNegative,
            ActivityCategory::HandleCrash,
            ActivityCategory::Implementation,
            ActivityCategory::ManualBaseline,
        ];
        let norm = s.trim().replace('-', "_").to_ascii_lowercase();
        all.into_iter().find(|c| c.as_str() == norm).ok_or_else(|| format!("unknown activity category `{s}`"))
    }
}

/// One timed unit of human work.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityRecord {
    pub activity_id: u64,
    pub session_id: String,
    /// 0 for work done before the replay (baseline, implementation).
    pub version_index: usize,
    pub protocol: String,
    pub framework: Option<String>,
    pub category: ActivityCategory,
    pub started_at: DateTime<Utc>,
    pub stopped_at: DateTime<Utc>,
    pub duration_s: u64,
    #[serde(default)]
    pub overridden: bool,
    #[serde(default)]
    pub note: String,
}

impl ActivityRecord {
    pub fn minutes(&self) -> f64 {
        self.duration_s as f64 / 60.0
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.stopped_at < self.started_at {
            return Err(format!("activity {} stops before it starts", self.activity_id));
        }
        if self.protocol.is_empty() {
            return Err(format!("activity {} has empty protocol", self.activity_id));
        }
        if self.category.is_maintenance() && self.version_index < 1 {
            return Err(format!("maintenance activity {} needs a version index >= 1", self.activity_id));
        }
        match self.category {
            ActivityCategory::ManualBaseline => {
                if self.framework.is_some() {
                    return Err("manual baseline carries no framework".into());
                }
            }
            _ => {
                if self.framework.as_deref().unwrap_or("").is_empty() {
                    return Err(format!(
                        "activity {} of category {} needs a framework",
                        self.activity_id, self.category
                    ));
                }
            }
        }
        if !self.overridden {
            let span = (self.stopped_at - self.started_at).num_milliseconds();
            let expected = ((span as f64) / 1000.0).round() as i64;
            if expected != self.duration_s as i64 {
                return Err(format!(
                    "activity {} duration {} s disagrees with its {} s span (and is not flagged as overridden)",
                    self.activity_id, self.duration_s, expected
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestRunRecord {
    pub version_index: usize,
    pub protocol: String,
    pub framework: String,
    pub outcome: Outcome,
    pub attempt: u32,
    /// Wall time the automated run took.
    #[serde(default)]
    pub elapsed_ms: u64,
    #[serde(default)]
    pub note: String,
}

impl TestRunRecord {
    pub fn key(&self) -> TestKey {
        TestKey::new(&self.protocol, &self.framework)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BugResolution {
    Fix,
    Workaround,
}

impl FromStr for BugResolution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fix" => Ok(BugResolution::Fix),
            "workaround" => Ok(BugResolution::Workaround),
            other => Err(format!("unknown bug resolution `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugRecord {
    pub version_index: usize,
    pub description: String,
    pub resolution: BugResolution,
    pub activity_id: u64,
}

/// How a failing (or suspicious) test run is classified by the tester.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Bug,
    BrokenTest,
    FalseNegative,
    Crash,
}

impl FailureKind {
    pub fn requires_failing_attempt(self) -> bool {
        matches!(self, FailureKind::Bug | FailureKind::BrokenTest)
    }

    /// Maintenance categories the tester is expected to log for this kind.
    pub fn activities(self) -> &'static [ActivityCategory] {
        match self {
            FailureKind::Bug => &[ActivityCategory::HandleBug],
            FailureKind::BrokenTest => &[ActivityCategory::AnalysisBrokenTest, ActivityCategory::RepairBrokenTest],
            FailureKind::FalseNegative => &[ActivityCategory::HandleFalseNegative],
            FailureKind::Crash => &[ActivityCategory::HandleCrash],
        }
    }
}

impl FromStr for FailureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().replace('-', "_").to_ascii_lowercase().as_str() {
            "bug" => Ok(FailureKind::Bug),
            "broken_test" | "broken" => Ok(FailureKind::BrokenTest),
            "false_negative" => Ok(FailureKind::FalseNegative),
            "crash" => Ok(FailureKind::Crash),
            other => Err(format!("unknown failure kind `{other}`")),
        }
    }
}
