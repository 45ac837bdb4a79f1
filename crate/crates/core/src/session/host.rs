use std::collections::{BTreeMap, VecDeque};
use std::path::PathBuf;

use chrono::Utc;

use crate::exec::{self, CommandSpec, ExecError};
use crate::history::{self, BuildResult, GitCli, HistoryError, VersionControl, VersionEntry, WorkspaceState};
use crate::model::{AutomatedTestRef, Outcome, TestKey};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestExecution {
    pub outcome: Outcome,
    pub elapsed_ms: u64,
    pub note: String,
}

/// Side effects the replay needs from the outside world.
pub trait ReplayHost: Send {
    fn checkout(&mut self, entry: &VersionEntry, force: bool) -> Result<WorkspaceState, HistoryError>;
    fn verify_build(&mut self, ws: &WorkspaceState) -> Result<BuildResult, HistoryError>;
    fn run_test(&mut self, ws: &WorkspaceState, test: &AutomatedTestRef) -> Result<TestExecution, ExecError>;
}

/// Checks out versions in a git working copy and runs the configured commands there.
pub struct GitHost {
    vcs: GitCli,
    workspace: PathBuf,
    build: CommandSpec,
}

impl GitHost {
    pub fn new(vcs: GitCli, workspace: impl Into<PathBuf>, build: CommandSpec) -> Self {
        GitHost { vcs, workspace: workspace.into(), build }
    }

    fn here(&self, ws: &WorkspaceState) -> WorkspaceState {
        WorkspaceState { path: self.workspace.clone(), ..ws.clone() }
    }
}

impl ReplayHost for GitHost {
    fn checkout(&mut self, entry: &VersionEntry, force: bool) -> Result<WorkspaceState, HistoryError> {
        if !force && self.vcs.is_dirty(&self.workspace)? {
            return Err(HistoryError::DirtyWorkspace(self.workspace.clone()));
        }
        self.vcs.checkout(&self.workspace, &entry.commit.id, force)?;
        Ok(WorkspaceState {
            path: self.workspace.clone(),
            index: entry.index,
            commit_id: entry.commit.id.clone(),
            checked_out_at: Utc::now(),
        })
    }

    fn verify_build(&mut self, ws: &WorkspaceState) -> Result<BuildResult, HistoryError> {
        let ws = self.here(ws);
        history::verify_build(&ws, &self.build)
    }

    fn run_test(&mut self, ws: &WorkspaceState, test: &AutomatedTestRef) -> Result<TestExecution, ExecError> {
        let ws = &self.here(ws);
        let mut env = history::command_env(ws);
        env.push(("REPLAYROI_PROTOCOL".into(), test.protocol.clone()));
        env.push(("REPLAYROI_FRAMEWORK".into(), test.framework.clone()));
        let out = exec::run(&test.run_command, &ws.path, &env)?;
        let note = if out.timed_out {
            format!("timed out after {} s", test.run_command.timeout_secs)
        } else if out.success {
            String::new()
        } else {
            out.excerpt(20)
        };
        Ok(TestExecution {
            outcome: if out.success { Outcome::Pass } else { Outcome::Fail },
            elapsed_ms: out.elapsed.as_millis() as u64,
            note,
        })
    }
}

/// In-memory host with predetermined outcomes, for dry runs and tests.
/// Unscripted runs pass; scripted outcomes are consumed in order.
#[derive(Debug, Default, Clone)]
pub struct ScriptedHost {
    outcomes: BTreeMap<(usize, TestKey), VecDeque<Outcome>>,
    failing_builds: BTreeMap<usize, u32>,
    pub elapsed_ms: u64,
    pub checkouts: Vec<usize>,
}

impl ScriptedHost {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn script(&mut self, index: usize, key: TestKey, outcomes: &[Outcome]) -> &mut Self {
        self.outcomes.entry((index, key)).or_default().extend(outcomes.iter().copied());
        self
    }

    /// The first `times` build verifications of version `index` fail.
    pub fn fail_build(&mut self, index: usize, times: u32) -> &mut Self {
        self.failing_builds.insert(index, times);
        self
    }
}

impl ReplayHost for ScriptedHost {
    fn checkout(&mut self, entry: &VersionEntry, _force: bool) -> Result<WorkspaceState, HistoryError> {
        self.checkouts.push(entry.index);
        Ok(WorkspaceState {
            path: PathBuf::from("."),
            index: entry.index,
            commit_id: entry.commit.id.clone(),
            checked_out_at: entry.calendar_time,
        })
    }

    fn verify_build(&mut self, ws: &WorkspaceState) -> Result<BuildResult, HistoryError> {
        match self.failing_builds.get_mut(&ws.index) {
            Some(n) if *n > 0 => {
                *n -= 1;
                Ok(BuildResult::Failed { log_excerpt: "scripted build failure".into() })
            }
            _ => Ok(BuildResult::Ok),
        }
    }

    fn run_test(&mut self, ws: &WorkspaceState, test: &AutomatedTestRef) -> Result<TestExecution, ExecError> {
        let outcome =
            self.outcomes.get_mut(&(ws.index, test.key())).and_then(|q| q.pop_front()).unwrap_or(Outcome::Pass);
        Ok(TestExecution { outcome, elapsed_ms: self.elapsed_ms, note: String::new() })
    }
}
