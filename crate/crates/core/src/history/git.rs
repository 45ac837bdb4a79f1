//! Git backend driving the `git` executable.

use std::path::{Path, PathBuf};
use std::process::Command;

use chrono::{DateTime, Utc};

use super::{CommitRef, HistoryError, VersionControl};

const RECORD_MARK: char = '\u{1e}';

#[derive(Debug, Clone)]
pub struct GitCli {
    repo: PathBuf,
}

impl GitCli {
    pub fn new(repo: impl Into<PathBuf>) -> Self {
        GitCli { repo: repo.into() }
    }

    pub fn repo(&self) -> &Path {
        &self.repo
    }

    fn git(&self, dir: &Path, args: &[&str]) -> Result<std::process::Output, HistoryError> {
        Command::new("git").arg("-C").arg(dir).args(args).env("LC_ALL", "C").output().map_err(|e| {
            HistoryError::RepositoryUnreadable { path: dir.to_path_buf(), detail: format!("cannot run git: {e}") }
        })
    }
}

fn stderr_of(out: &std::process::Output) -> String {
    String::from_utf8_lossy(&out.stderr).trim().to_string()
}

impl VersionControl for GitCli {
    fn load_commits(&self, branch: &str) -> Result<Vec<CommitRef>, HistoryError> {
        let probe = self.git(&self.repo, &["rev-parse", "--git-dir"])?;
        if !probe.status.success() {
            return Err(HistoryError::RepositoryUnreadable { path: self.repo.clone(), detail: stderr_of(&probe) });
        }
        if branch.starts_with('-') {
            return Err(HistoryError::BranchMissing(branch.to_string()));
        }
        let rev = format!("{branch}^{{commit}}");
        let verify = self.git(&self.repo, &["rev-parse", "--verify", "--quiet", &rev])?;
        if !verify.status.success() {
            return Err(HistoryError::BranchMissing(branch.to_string()));
        }
        let format = format!("--format={RECORD_MARK}%H %ct");
        let out = self.git(
            &self.repo,
            &[
                "log",
                "--first-parent",
                "--diff-merges=first-parent",
                "--root",
                "--reverse",
                "--numstat",
                "--no-renames",
                &format,
                branch,
                "--",
            ],
        )?;
        if !out.status.success() {
            return Err(HistoryError::RepositoryUnreadable { path: self.repo.clone(), detail: stderr_of(&out) });
        }
        parse_git_log(&String::from_utf8_lossy(&out.stdout))
    }

    fn is_dirty(&self, workspace: &Path) -> Result<bool, HistoryError> {
        let out = self.git(workspace, &["status", "--porcelain", "--untracked-files=no"])?;
        if !out.status.success() {
            return Err(HistoryError::CheckoutFailed(stderr_of(&out)));
        }
        Ok(!out.stdout.iter().all(|b| b.is_ascii_whitespace()))
    }

    fn checkout(&self, workspace: &Path, commit: &str, force: bool) -> Result<(), HistoryError> {
        let mut args = vec!["checkout", "--quiet", "--detach"];
        if force {
            args.push("--force");
        }
        args.push(commit);
        let out = self.git(workspace, &args)?;
        if !out.status.success() {
            return Err(HistoryError::CheckoutFailed(stderr_of(&out)));
        }
        Ok(())
    }

    fn head(&self, workspace: &Path) -> Result<String, HistoryError> {
        let out = self.git(workspace, &["rev-parse", "HEAD"])?;
        if !out.status.success() {
            return Err(HistoryError::CheckoutFailed(stderr_of(&out)));
        }
        Ok(String::from_utf8_lossy(&out.stdout).trim().to_string())
    }
}

/// Parses `git log --numstat --format=<RS>%H %ct` output. Churn is the sum of
/// added and deleted lines; binary files (`-`) count as zero.
pub fn parse_git_log(text: &str) -> Result<Vec<CommitRef>, HistoryError> {
    let mut commits: Vec<CommitRef> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let err = |m: &str| HistoryError::Parse(format!("line {}: {m}", lineno + 1));
        if let Some(header) = line.strip_prefix(RECORD_MARK) {
            let (id, ts) = header.split_once(' ').ok_or_else(|| err("commit header needs `<id> <unix time>`"))?;
            if id.is_empty() || !id.chars().all(|c| c.is_ascii_hexdigit()) {
                return Err(err("commit id must be hexadecimal"));
            }
            let secs: i64 = ts.trim().parse().map_err(|_| err("bad commit timestamp"))?;
            let timestamp =
                DateTime::<Utc>::from_timestamp(secs, 0).ok_or_else(|| err("commit timestamp out of range"))?;
            commits.push(CommitRef { id: id.to_string(), timestamp, churn: Some(0) });
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let current = commits.last_mut().ok_or_else(|| err("file statistics before any commit header"))?;
        let mut fields = line.splitn(3, '\t');
        let added = fields.next().unwrap_or_default();
        let deleted = fields.next().ok_or_else(|| err("numstat line needs tab-separated counts"))?;
        let count = |f: &str| -> Result<u64, HistoryError> {
            if f == "-" {
                Ok(0)
            } else {
                f.parse().map_err(|_| err("numstat count is not a number"))
            }
        };
        let delta = count(added)?.saturating_add(count(deleted)?);
        if let Some(c) = current.churn.as_mut() {
            *c = c.saturating_add(delta);
        }
    }
    Ok(commits)
}
