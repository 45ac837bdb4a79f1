//! Loading a commit history and choosing the versions to replay.

mod git;
mod parse;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, CommandSpec, ExecError};

pub use git::{parse_git_log, GitCli};
pub use parse::{format_span, parse_instant, parse_instant_end, parse_span};

#[derive(Debug, Error)]
pub enum HistoryError {
    #[error("repository unreadable at {path}: {detail}")]
    RepositoryUnreadable { path: PathBuf, detail: String },
    #[error("branch `{0}` does not exist")]
    BranchMissing(String),
    #[error("no commits fall inside the requested range")]
    EmptyRange,
    #[error("selection strategy yields zero versions")]
    NoVersions,
    #[error("invalid selection strategy: {0}")]
    InvalidStrategy(String),
    #[error("commit `{0}` is not part of the loaded history")]
    UnknownCommit(String),
    #[error("commit prefix `{0}` is ambiguous")]
    AmbiguousCommit(String),
    #[error("commit {0} has no churn information")]
    MissingChurn(String),
    #[error("version index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("workspace {0} has uncommitted changes (use force to discard them)")]
    DirtyWorkspace(PathBuf),
    #[error("checkout failed: {0}")]
    CheckoutFailed(String),
    #[error("unparseable output from version control: {0}")]
    Parse(String),
    #[error("build command not found: {0}")]
    CommandNotFound(String),
    #[error("build timed out after {0} s")]
    Timeout(u64),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// One commit on the replayed branch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRef {
    pub id: String,
    pub timestamp: DateTime<Utc>,
    /// Lines added plus deleted versus the first parent (or the empty tree).
    #[serde(default)]
    pub churn: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionEntry {
    /// 1-based position in the replay.
    pub index: usize,
    pub commit: CommitRef,
    pub label: String,
    pub calendar_time: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyKind {
    Interval { period_s: i64 },
    Churn { threshold_lines: u64 },
    Explicit { ids: Vec<String> },
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyKind::Interval { period_s } => write!(f, "interval:{}", format_span(*period_s)),
            StrategyKind::Churn { threshold_lines } => write!(f, "churn:{threshold_lines}"),
            StrategyKind::Explicit { ids } => write!(f, "explicit:{}", ids.join(",")),
        }
    }
}

impl FromStr for StrategyKind {
    type Err = HistoryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |m: &str| HistoryError::InvalidStrategy(m.to_string());
        let (kind, arg) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| bad("expected `interval:<span>`, `churn:<lines>` or `explicit:<ids>`"))?;
        match kind {
            "interval" => {
                let period_s = parse_span(arg).map_err(|e| bad(&e))?;
                Ok(StrategyKind::Interval { period_s })
            }
            "churn" => {
                let threshold_lines: u64 =
                    arg.trim().parse().map_err(|_| bad("churn threshold must be a positive integer"))?;
                if threshold_lines == 0 {
                    return Err(bad("churn threshold must be > 0"));
                }
                Ok(StrategyKind::Churn { threshold_lines })
            }
            "explicit" => {
                let ids: Vec<String> = arg.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
                if ids.is_empty() {
                    return Err(bad("explicit strategy needs at least one commit id"));
                }
                Ok(StrategyKind::Explicit { ids })
            }
            other => Err(bad(&format!("unknown strategy `{other}`"))),
        }
    }
}

/// Half-open window `[start, end)` that is re-sampled at a finer period.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentinelWindow {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub period_s: i64,
}

impl SentinelWindow {
    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        t >= self.start && t < self.end
    }
}

impl fmt::Display for SentinelWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}:{}", self.start.to_rfc3339(), self.end.to_rfc3339(), format_span(self.period_s))
    }
}

impl FromStr for SentinelWindow {
    type Err = HistoryError;

    /// `START..END:SPAN`, e.g. `2024-01-01..2024-01-08:1d`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |m: String| HistoryError::InvalidStrategy(m);
        let (range, span) =
            s.trim().rsplit_once(':').ok_or_else(|| bad(format!("sentinel `{s}` must look like START..END:SPAN")))?;
        // instants may contain ':' too; the span is always after the last one
        let (a, b) =
            range.split_once("..").ok_or_else(|| bad(format!("sentinel `{s}` must look like START..END:SPAN")))?;
        let start = parse_instant(a).map_err(bad)?;
        let end = parse_instant(b).map_err(bad)?;
        let period_s = parse_span(span).map_err(bad)?;
        let w = SentinelWindow { start, end, period_s };
        if w.end <= w.start {
            return Err(bad(format!("sentinel `{s}` ends before it starts")));
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionStrategy {
    pub kind: StrategyKind,
    #[serde(default)]
    pub sentinels: Vec<SentinelWindow>,
    /// Bucketing origin for interval strategies; defaults to the first commit.
    #[serde(default)]
    pub anchor: Option<DateTime<Utc>>,
}

impl SelectionStrategy {
    pub fn new(kind: StrategyKind) -> Self {
        SelectionStrategy { kind, sentinels: Vec::new(), anchor: None }
    }

    pub fn with_anchor(mut self, anchor: DateTime<Utc>) -> Self {
        self.anchor = Some(anchor);
        self
    }

    pub fn with_sentinel(mut self, w: SentinelWindow) -> Self {
        self.sentinels.push(w);
        self
    }

    pub fn validate(&self, range: Option<&TimeRange>) -> Result<(), HistoryError> {
        let bad = |m: String| Err(HistoryError::InvalidStrategy(m));
        match &self.kind {
            StrategyKind::Interval { period_s } if *period_s <= 0 => return bad("interval period must be > 0".into()),
            StrategyKind::Churn { threshold_lines } if *threshold_lines == 0 => {
                return bad("churn threshold must be > 0".into())
            }
            StrategyKind::Explicit { ids } if ids.is_empty() => return bad("explicit strategy needs commit ids".into()),
            _ => {}
        }
        let mut windows: Vec<&SentinelWindow> = self.sentinels.iter().collect();
        windows.sort_by_key(|w| w.start);
        for w in &windows {
            if w.period_s <= 0 {
                return bad(format!("sentinel {w} needs a period > 0"));
            }
            if w.end <= w.start {
                return bad(format!("sentinel {w} is empty"));
            }
            if let Some(r) = range {
                if r.from.is_some_and(|f| w.start < f) || r.to.is_some_and(|t| w.end > t + chrono::Duration::seconds(1))
                {
                    return bad(format!("sentinel {w} lies outside the selected range"));
                }
            }
        }
        for pair in windows.windows(2) {
            if pair[1].start < pair[0].end {
                return bad(format!("sentinels {} and {} overlap", pair[0], pair[1]));
            }
        }
        Ok(())
    }
}

/// Inclusive time range; open ends are unbounded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
}

impl TimeRange {
    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.from.is_none_or(|f| t >= f) && self.to.is_none_or(|e| t <= e)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionSequence {
    pub entries: Vec<VersionEntry>,
    pub strategy: SelectionStrategy,
}

impl VersionSequence {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// 1-based lookup.
    pub fn get(&self, index: usize) -> Result<&VersionEntry, HistoryError> {
        if index == 0 || index > self.entries.len() {
            return Err(HistoryError::IndexOutOfRange { index, len: self.entries.len() });
        }
        Ok(&self.entries[index - 1])
    }
}

/// Read-only access to a version-control system plus checkout of a working copy.
pub trait VersionControl {
    /// All first-parent commits of `branch`, oldest first.
    fn load_commits(&self, branch: &str) -> Result<Vec<CommitRef>, HistoryError>;
    fn is_dirty(&self, workspace: &Path) -> Result<bool, HistoryError>;
    fn checkout(&self, workspace: &Path, commit: &str, force: bool) -> Result<(), HistoryError>;
    fn head(&self, workspace: &Path) -> Result<String, HistoryError>;
}

pub fn load_commit_history(
    vcs: &dyn VersionControl,
    branch: &str,
    range: &TimeRange,
) -> Result<Vec<CommitRef>, HistoryError> {
    let mut commits = vcs.load_commits(branch)?;
    let mut seen = HashSet::new();
    commits.retain(|c| seen.insert(c.id.clone()));
    commits.retain(|c| range.contains(c.timestamp));
    // stable: commits sharing a timestamp keep branch order
    commits.sort_by_key(|c| c.timestamp);
    if commits.is_empty() {
        return Err(HistoryError::EmptyRange);
    }
    Ok(commits)
}

fn ceil_div(num: i64, den: i64) -> i64 {
    let q = num.div_euclid(den);
    if num.rem_euclid(den) == 0 {
        q
    } else {
        q + 1
    }
}

/// Bucket `b` holds the commits in `(anchor + (b-1)p, anchor + bp]`, so the
/// last commit of a bucket is the last one at or before its boundary.
fn bucket_of(t: DateTime<Utc>, anchor: DateTime<Utc>, period_s: i64) -> i64 {
    let ms = (t - anchor).num_milliseconds();
    ceil_div(ms, period_s * 1000)
}

fn label_for(c: &CommitRef) -> String {
    let short: String = c.id.chars().take(8).collect();
    format!("{} {}", c.timestamp.format("%Y-%m-%d"), short)
}

pub fn select_versions(history: &[CommitRef], strategy: &SelectionStrategy) -> Result<VersionSequence, HistoryError> {
    strategy.validate(None)?;
    if history.is_empty() {
        return Err(HistoryError::NoVersions);
    }
    let anchor = strategy.anchor.unwrap_or(history[0].timestamp);
    let window_of = |t: DateTime<Utc>| strategy.sentinels.iter().position(|w| w.contains(t));

    // positions into `history`
    let mut chosen: Vec<usize> = Vec::new();

    // sentinel windows: (window, bucket) -> last position
    let mut sentinel_buckets: BTreeMap<(usize, i64), usize> = BTreeMap::new();
    for (pos, c) in history.iter().enumerate() {
        if let Some(w) = window_of(c.timestamp) {
            let win = &strategy.sentinels[w];
            sentinel_buckets.insert((w, bucket_of(c.timestamp, win.start, win.period_s)), pos);
        }
    }
    chosen.extend(sentinel_buckets.values());

    let outside: Vec<usize> = (0..history.len()).filter(|&p| window_of(history[p].timestamp).is_none()).collect();

    match &strategy.kind {
        StrategyKind::Interval { period_s } => {
            let mut buckets: BTreeMap<i64, usize> = BTreeMap::new();
            for &p in &outside {
                buckets.insert(bucket_of(history[p].timestamp, anchor, *period_s), p);
            }
            chosen.extend(buckets.values());
        }
        StrategyKind::Churn { threshold_lines } => {
            let mut acc = 0u64;
            let mut last_selected = None;
            for &p in &outside {
                let churn = history[p].churn.ok_or_else(|| HistoryError::MissingChurn(history[p].id.clone()))?;
                acc = acc.saturating_add(churn);
                if acc >= *threshold_lines {
                    chosen.push(p);
                    last_selected = Some(p);
                    acc = 0;
                }
            }
            // the replay always reaches the newest commit of the range
            if let Some(&last) = outside.last() {
                if last_selected != Some(last) && acc > 0 {
                    chosen.push(last);
                }
            }
        }
        StrategyKind::Explicit { ids } => {
            for id in ids {
                let matches: Vec<usize> = (0..history.len())
                    .filter(|&p| history[p].id == *id || (id.len() >= 4 && history[p].id.starts_with(id.as_str())))
                    .collect();
                match matches.as_slice() {
                    [] => return Err(HistoryError::UnknownCommit(id.clone())),
                    [p] => chosen.push(*p),
                    _ => {
                        if let Some(&p) = matches.iter().find(|&&p| history[p].id == *id) {
                            chosen.push(p)
                        } else {
                            return Err(HistoryError::AmbiguousCommit(id.clone()));
                        }
                    }
                }
            }
        }
    }

    chosen.sort_unstable();
    chosen.dedup();
    // keep calendar times strictly increasing: of equal-timestamp picks keep the later
    let mut kept: Vec<usize> = Vec::with_capacity(chosen.len());
    for p in chosen {
        if let Some(&prev) = kept.last() {
            if history[prev].timestamp >= history[p].timestamp {
                kept.pop();
            }
        }
        kept.push(p);
    }
    if kept.is_empty() {
        return Err(HistoryError::NoVersions);
    }
    let entries = kept
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let c = history[p].clone();
            VersionEntry { index: i + 1, label: label_for(&c), calendar_time: c.timestamp, commit: c }
        })
        .collect();
    Ok(VersionSequence { entries, strategy: strategy.clone() })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkspaceState {
    pub path: PathBuf,
    pub index: usize,
    pub commit_id: String,
    pub checked_out_at: DateTime<Utc>,
}

pub fn checkout_version(
    vcs: &dyn VersionControl,
    seq: &VersionSequence,
    index: usize,
    workspace: &Path,
    force: bool,
) -> Result<WorkspaceState, HistoryError> {
    let entry = seq.get(index)?;
    if !force && vcs.is_dirty(workspace)? {
        return Err(HistoryError::DirtyWorkspace(workspace.to_path_buf()));
    }
    vcs.checkout(workspace, &entry.commit.id, force)?;
    Ok(WorkspaceState {
        path: workspace.to_path_buf(),
        index,
        commit_id: entry.commit.id.clone(),
        checked_out_at: Utc::now(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum BuildResult {
    Ok,
    Failed { log_excerpt: String },
}

impl BuildResult {
    pub fn is_ok(&self) -> bool {
        matches!(self, BuildResult::Ok)
    }
}

/// Environment handed to build and test commands.
pub fn command_env(ws: &WorkspaceState) -> Vec<(String, String)> {
    vec![("REPLAYROI_VERSION_INDEX".into(), ws.index.to_string()), ("REPLAYROI_COMMIT".into(), ws.commit_id.clone())]
}

pub fn verify_build(ws: &WorkspaceState, build: &CommandSpec) -> Result<BuildResult, HistoryError> {
    let out = exec::run(build, &ws.path, &command_env(ws)).map_err(|e| match e {
        ExecError::NotFound(p) => HistoryError::CommandNotFound(p),
        other => HistoryError::Exec(other),
    })?;
    if out.timed_out {
        return Err(HistoryError::Timeout(build.timeout_secs));
    }
    if out.success {
        Ok(BuildResult::Ok)
    } else {
        Ok(BuildResult::Failed { log_excerpt: out.excerpt(40) })
    }
}
