//! Session operations shared by the subcommands and the command endpoints.

use replayroi_core::history::VersionSequence;
use replayroi_core::model::{ActivityCategory, BugResolution, FailureKind, Outcome, TestKey};
use replayroi_core::session::{AdvanceOutcome, Phase, Session, SessionState, TimerHandle};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Op {
    RecordManual {
        protocol: String,
        seconds: u64,
        #[serde(default)]
        overwrite: bool,
    },
    RecordImpl {
        protocol: String,
        framework: String,
        seconds: u64,
        #[serde(default)]
        overwrite: bool,
    },
    StartReplay {
        #[serde(default)]
        force: bool,
    },
    Rebuild {
        #[serde(default)]
        force: bool,
    },
    /// One test, or every test not yet passing when `test` is absent.
    RunTest {
        #[serde(default)]
        test: Option<String>,
    },
    Classify {
        test: String,
        kind: FailureKind,
    },
    StartActivity {
        category: ActivityCategory,
        test: String,
    },
    StopActivity {
        #[serde(default)]
        id: Option<u64>,
        #[serde(default)]
        note: String,
        #[serde(default)]
        override_seconds: Option<u64>,
    },
    RecordBug {
        activity: u64,
        description: String,
        resolution: BugResolution,
    },
    Advance {
        #[serde(default)]
        force: bool,
    },
}

impl Op {
    pub const NAMES: [&'static str; 10] = [
        "record_manual",
        "record_impl",
        "start_replay",
        "rebuild",
        "run_test",
        "classify",
        "start_activity",
        "stop_activity",
        "record_bug",
        "advance",
    ];
}

/// Result of one operation: a JSON value and its human rendering.
#[derive(Debug, Clone)]
pub struct OpOutput {
    pub value: Value,
    pub text: String,
}

/// `PROTOCOL/FRAMEWORK`.
pub fn parse_test_key(s: &str) -> Result<TestKey, CliError> {
    s.parse().map_err(CliError::Usage)
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

/// Applies `op` to the session. `versions` is consulted only by `start_replay`.
pub fn apply(
    session: &mut Session,
    op: &Op,
    versions: impl FnOnce() -> Result<VersionSequence, CliError>,
) -> Result<OpOutput, CliError> {
    Ok(match op {
        Op::RecordManual { protocol, seconds, overwrite } => {
            let r = session.record_manual_baseline(protocol, *seconds, *overwrite)?;
            OpOutput { text: format!("manual baseline {protocol}: {} s", r.duration_s), value: to_value(&r) }
        }
        Op::RecordImpl { protocol, framework, seconds, overwrite } => {
            let key = TestKey::new(protocol, framework);
            let r = session.record_implementation(&key, *seconds, *overwrite)?;
            OpOutput { text: format!("implementation {key}: {} s", r.duration_s), value: to_value(&r) }
        }
        Op::StartReplay { force } => {
            let seq = versions()?;
            let st = session.start_replay(&seq, *force)?;
            OpOutput {
                text: format!(
                    "replay started over {} versions; version 1 build {}",
                    st.versions.len(),
                    build_word(st.build_ok)
                ),
                value: to_value(&st),
            }
        }
        Op::Rebuild { force } => {
            let ok = session.prepare_version(*force)?;
            OpOutput { text: format!("build {}", build_word(Some(ok))), value: json!({ "build_ok": ok }) }
        }
        Op::RunTest { test } => {
            let runs = match test {
                Some(t) => vec![session.run_test(&parse_test_key(t)?)?],
                None => session.run_pending()?,
            };
            let text = if runs.is_empty() {
                "nothing to run; every test passes".to_string()
            } else {
                runs.iter()
                    .map(|r| {
                        format!("{}: {} (attempt {}, {} ms)", r.key(), outcome_word(r.outcome), r.attempt, r.elapsed_ms)
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            };
            OpOutput { text, value: to_value(&runs) }
        }
        Op::Classify { test, kind } => {
            let key = parse_test_key(test)?;
            let req = session.classify_failure(&key, *kind)?;
            let acts: Vec<&str> = req.activities.iter().map(|a| a.as_str()).collect();
            let mut text = format!("{key} classified; log: {}", acts.join(", "));
            if req.bug_record {
                text.push_str("; then record the bug");
            }
            if req.automatic_rerun {
                text.push_str("; the test re-runs when the activity stops");
            }
            OpOutput { text, value: to_value(&req) }
        }
        Op::StartActivity { category, test } => {
            let key = if *category == ActivityCategory::ManualBaseline && !test.contains('/') {
                TestKey::new(test, "")
            } else {
                parse_test_key(test)?
            };
            let h = session.start_activity(*category, &key)?;
            OpOutput { text: format!("timer {} started ({category})", h.activity_id), value: to_value(&h) }
        }
        Op::StopActivity { id, note, override_seconds } => {
            let out =
                session.stop_activity(id.map(|activity_id| TimerHandle { activity_id }), note, *override_seconds)?;
            let mut text = format!(
                "timer {} stopped: {} s {}",
                out.record.activity_id, out.record.duration_s, out.record.category
            );
            if let Some(r) = &out.rerun {
                text.push_str(&format!("\nre-run {}: {}", r.key(), outcome_word(r.outcome)));
            }
            OpOutput { text, value: to_value(&out) }
        }
        Op::RecordBug { activity, description, resolution } => {
            let b = session.record_bug(*activity, description, *resolution)?;
            OpOutput {
                text: format!("bug recorded at version {} (activity {activity})", b.version_index),
                value: to_value(&b),
            }
        }
        Op::Advance { force } => {
            let out = session.advance_version(*force)?;
            let text = match &out {
                AdvanceOutcome::Advanced { index, build_ok } => {
                    format!("now at version {index}; build {}", build_word(Some(*build_ok)))
                }
                AdvanceOutcome::Completed => "replay completed".to_string(),
            };
            OpOutput { text, value: to_value(&out) }
        }
    })
}

fn build_word(ok: Option<bool>) -> &'static str {
    match ok {
        Some(true) => "ok",
        Some(false) => "FAILED",
        None => "not verified",
    }
}

fn outcome_word(o: Outcome) -> &'static str {
    match o {
        Outcome::Pass => "pass",
        Outcome::Fail => "FAIL",
    }
}

/// Session status as served and printed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusView {
    pub state: SessionState,
    pub version_count: usize,
    pub missing_baseline: Vec<String>,
    pub blockers: Vec<String>,
}

impl StatusView {
    pub fn of(state: &SessionState) -> Self {
        let blockers = if matches!(state.phase, Phase::Replay { .. }) { state.blockers() } else { Vec::new() };
        StatusView {
            version_count: state.versions.len(),
            missing_baseline: state.missing_baseline(),
            blockers,
            state: state.clone(),
        }
    }

    pub fn render(&self) -> String {
        let st = &self.state;
        let mut out = String::new();
        match &st.phase {
            Phase::Baseline => {
                out.push_str("phase: baseline\n");
                if self.missing_baseline.is_empty() {
                    out.push_str("baseline complete; ready for `replay start`\n");
                } else {
                    out.push_str(&format!("missing: {}\n", self.missing_baseline.join(", ")));
                }
            }
            Phase::Replay { index, cursor } => {
                let label = st.versions.get(index - 1).map(|v| v.label.as_str()).unwrap_or("");
                out.push_str(&format!("phase: replay, version {index}/{} {label}\n", self.version_count));
                out.push_str(&format!("build: {}\n", build_word(st.build_ok)));
                for (key, t) in &st.tests {
                    let last = match t.last {
                        None => "not run",
                        Some(Outcome::Pass) => "pass",
                        Some(Outcome::Fail) if t.awaiting_classification => "FAIL (classify)",
                        Some(Outcome::Fail) => "FAIL",
                    };
                    let mark = if cursor.as_ref() == Some(key) { ">" } else { " " };
                    out.push_str(&format!("{mark} {key:<16} {last:<16} attempts {}\n", t.attempts));
                }
            }
            Phase::Completed => {
                out.push_str(&format!("phase: completed ({} versions)\n", st.completed_versions));
            }
        }
        if let Some(t) = &st.active_timer {
            let target = match &t.framework {
                Some(f) => format!("{}/{f}", t.protocol),
                None => t.protocol.clone(),
            };
            out.push_str(&format!(
                "timer {} running: {} on {target} since {}\n",
                t.activity_id,
                t.category,
                t.started_at.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
            ));
        }
        for b in &self.blockers {
            out.push_str(&format!("blocked: {b}\n"));
        }
        out
    }
}
