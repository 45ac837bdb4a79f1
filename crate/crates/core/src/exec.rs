//! Running user-configured external commands (builds, automated tests) with a
//! timeout and captured output.

use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

pub const DEFAULT_TIMEOUT_SECS: u64 = 30 * 60;

/// An external command. A plain string in config becomes `sh -c <string>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "CommandSpecRepr")]
pub struct CommandSpec {
    pub argv: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_SECS
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CommandSpecRepr {
    Shell(String),
    Full {
        #[serde(default)]
        argv: Vec<String>,
        #[serde(default)]
        shell: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

impl From<CommandSpecRepr> for CommandSpec {
    fn from(r: CommandSpecRepr) -> Self {
        match r {
            CommandSpecRepr::Shell(s) => CommandSpec::shell(&s),
            CommandSpecRepr::Full { argv, shell, timeout_secs } => {
                let argv = match shell {
                    Some(s) if argv.is_empty() => vec!["sh".into(), "-c".into(), s],
                    _ => argv,
                };
                CommandSpec { argv, timeout_secs }
            }
        }
    }
}

impl CommandSpec {
    pub fn shell(script: &str) -> Self {
        CommandSpec { argv: vec!["sh".into(), "-c".into(), script.into()], timeout_secs: DEFAULT_TIMEOUT_SECS }
    }

    pub fn with_timeout(mut self, secs: u64) -> Self {
        self.timeout_secs = secs;
        self
    }
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("command is empty")]
    Empty,
    #[error("command not found: {0}")]
    NotFound(String),
    #[error("failed to spawn `{program}`: {source}")]
    Spawn {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("i/o error while running command: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ExecOutput {
    pub exit_code: Option<i32>,
    pub success: bool,
    pub timed_out: bool,
    pub stdout: String,
    pub stderr: String,
    pub elapsed: Duration,
}

impl ExecOutput {
    /// Tail of the combined output, at most `max_lines` lines.
    pub fn excerpt(&self, max_lines: usize) -> String {
        let combined = format!("{}{}", self.stdout, self.stderr);
        let lines: Vec<&str> = combined.lines().collect();
        let start = lines.len().saturating_sub(max_lines);
        lines[start..].join("\n")
    }
}

/// Runs `spec` in `cwd`. Exceeding the timeout kills the whole process group
/// and reports `timed_out`; it is not an error here.
pub fn run(spec: &CommandSpec, cwd: &Path, env: &[(String, String)]) -> Result<ExecOutput, ExecError> {
    let (program, args) = spec.argv.split_first().ok_or(ExecError::Empty)?;
    let mut cmd = Command::new(program);
    cmd.args(args).current_dir(cwd).stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::piped());
    for (k, v) in env {
        cmd.env(k, v);
    }
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        cmd.process_group(0);
    }
    let started = Instant::now();
    let mut child = cmd.spawn().map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            ExecError::NotFound(program.clone())
        } else {
            ExecError::Spawn { program: program.clone(), source: e }
        }
    })?;

    let mut out_pipe = child.stdout.take().expect("stdout piped");
    let mut err_pipe = child.stderr.take().expect("stderr piped");
    let out_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = out_pipe.read_to_end(&mut buf);
        buf
    });
    let err_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = err_pipe.read_to_end(&mut buf);
        buf
    });

    let timeout = Duration::from_secs(spec.timeout_secs.max(1));
    let (status, timed_out) = match child.wait_timeout(timeout)? {
        Some(status) => (Some(status), false),
        None => {
            kill_group(&mut child);
            let _ = child.wait();
            (None, true)
        }
    };
    let stdout = out_reader.join().unwrap_or_default();
    let stderr = err_reader.join().unwrap_or_default();

    Ok(ExecOutput {
        exit_code: status.and_then(|s| s.code()),
        success: status.map(|s| s.success()).unwrap_or(false),
        timed_out,
        stdout: String::from_utf8_lossy(&stdout).into_owned(),
        stderr: String::from_utf8_lossy(&stderr).into_owned(),
        elapsed: started.elapsed(),
    })
}

#[cfg(unix)]
fn kill_group(child: &mut std::process::Child) {
    // process_group(0) made the child a group leader with pgid == pid.
    let pgid = child.id() as i32;
    unsafe {
        libc::kill(-pgid, libc::SIGKILL);
    }
    let _ = child.kill();
}

#[cfg(not(unix))]
fn kill_group(child: &mut std::process::Child) {
    let _ = child.kill();
}
