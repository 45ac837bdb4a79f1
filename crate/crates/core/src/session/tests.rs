use std::time::Duration;

use chrono::{TimeZone, Utc};
use proptest::prelude::*;

use super::*;
use crate::exec::CommandSpec;
use crate::history::{CommitRef, SelectionStrategy, StrategyKind, VersionEntry};
use crate::ledger::fold_events;
use crate::model::{AutomatedTestRef, FrameworkId, TestProtocol};

fn project(protocols: &[&str], frameworks: &[&str]) -> Project {
    Project {
        name: "fixture".into(),
        protocols: protocols
            .iter()
            .map(|p| TestProtocol {
                id: p.to_string(),
                title: format!("protocol {p}"),
                description: String::new(),
                selected: true,
            })
            .collect(),
        frameworks: frameworks.iter().map(|f| FrameworkId { id: f.to_string(), name: f.to_uppercase() }).collect(),
        tests: protocols
            .iter()
            .flat_map(|p| {
                frameworks.iter().map(move |f| AutomatedTestRef {
                    protocol: p.to_string(),
                    framework: f.to_string(),
                    run_command: CommandSpec::shell("true"),
                    script_locator: None,
                })
            })
            .collect(),
    }
}

fn versions(m: usize) -> VersionSequence {
    let t0 = Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap();
    let entries = (1..=m)
        .map(|i| {
            let ts = t0 + chrono::Duration::days(7 * i as i64);
            VersionEntry {
                index: i,
                commit: CommitRef { id: format!("{i:040x}"), timestamp: ts, churn: Some(10) },
                label: format!("v{i}"),
                calendar_time: ts,
            }
        })
        .collect();
    VersionSequence { entries, strategy: SelectionStrategy::new(StrategyKind::Interval { period_s: 7 * 86_400 }) }
}

fn start_clock() -> ManualClock {
    ManualClock::new(Utc.with_ymd_and_hms(2024, 3, 1, 9, 0, 0).unwrap())
}

fn session(host: ScriptedHost, clock: &ManualClock) -> Session {
    Session::new(Ledger::in_memory(), Box::new(host), Box::new(clock.clone()))
}

/// Configured, fully baselined session for one protocol and one framework.
fn ready(host: ScriptedHost, clock: &ManualClock) -> Session {
    let mut s = session(host, clock);
    s.configure(project(&["T1"], &["ea"]), "h").unwrap();
    s.record_manual_baseline("T1", 600, false).unwrap();
    s.record_implementation(&TestKey::new("T1", "ea"), 3600, false).unwrap();
    s
}

fn key() -> TestKey {
    TestKey::new("T1", "ea")
}

fn consistent(s: &Session) {
    assert_eq!(&SessionState::from_events(s.events()), s.state());
}

#[test]
fn timer_measures_monotonic_seconds() {
    let clock = start_clock();
    let mut s = ready(ScriptedHost::new(), &clock);
    s.start_replay(&versions(3), false).unwrap();
    let h = s.start_activity(ActivityCategory::AnalysisBrokenTest, &key()).unwrap();
    clock.advance(Duration::from_secs(90));
    let out = s.stop_activity(Some(h), "", None).unwrap();
    assert_eq!(out.record.duration_s, 90);
    assert!(!out.record.overridden);
    assert!(out.record.validate().is_ok());
    consistent(&s);
}

#[test]
fn wall_clock_jumps_do_not_change_durations() {
    let clock = start_clock();
    let mut s = ready(ScriptedHost::new(), &clock);
    s.start_replay(&versions(3), false).unwrap();
    let h = s.start_activity(ActivityCategory::RepairBrokenTest, &key()).unwrap();
    clock.advance(Duration::from_secs(30));
    clock.adjust_wall(chrono::Duration::hours(-2));
    clock.advance(Duration::from_secs(30));
    let out = s.stop_activity(Some(h), "", None).unwrap();
    assert_eq!(out.record.duration_s, 60);
    // event instants stay non-decreasing
    let ats: Vec<_> = s.events().iter().map(|e| e.at).collect();
    assert!(ats.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn overlapping_timers_are_rejected() {
    let clock = start_clock();
    let mut s = ready(ScriptedHost::new(), &clock);
    s.start_replay(&versions(2), false).unwrap();
    s.start_activity(ActivityCategory::AnalysisBrokenTest, &key()).unwrap();
    let err = s.start_activity(ActivityCategory::HandleCrash, &key()).unwrap_err();
    assert!(matches!(err, SessionError::TimerActive(_)));
}

#[test]
fn stop_without_start_is_rejected() {
    let clock = start_clock();
    let mut s = ready(ScriptedHost::new(), &clock);
    assert!(matches!(s.stop_activity(None, "", None), Err(SessionError::NoActiveTimer)));
}

#[test]
fn stop_with_wrong_handle_is_rejected() {
    let clock = start_clock();
    let mut s = ready(ScriptedHost::new(), &clock);
    s.start_replay(&versions(2), false).unwrap();
    let h = s.start_activity(ActivityCategory::AnalysisBrokenTest, &key()).unwrap();
    let wrong = TimerHandle { activity_id: h.activity_id + 100 };
    assert!(matches!(s.stop_activity(Some(wrong), "", None), Err(SessionError::TimerMismatch { .. })));
}

#[test]
fn override_is_flagged() {
    let clock = start_clock();
    let mut s = ready(ScriptedHost::new(), &clock);
    s.start_replay(&versions(2), false).unwrap();
    s.start_activity(ActivityCategory::AnalysisBrokenTest, &key()).unwrap();
    clock.advance(Duration::from_secs(5));
    let out = s.stop_activity(None, "forgot the timer", Some(1200)).unwrap();
    assert_eq!(out.record.duration_s, 1200);
    assert!(out.record.overridden);
}

#[test]
fn timer_from_another_process_falls_back_to_wall_clock() {
    let clock = start_clock();
    let mut s = ready(ScriptedHost::new(), &clock);
    s.start_replay(&versions(2), false).unwrap();
    s.start_activity(ActivityCategory::AnalysisBrokenTest, &key()).unwrap();
    clock.advance(Duration::from_secs(45));
    let ledger = s.into_ledger();
    let mut s = Session::new(ledger, Box::new(ScriptedHost::new()), Box::new(clock.clone()));
    let out = s.stop_activity(None, "", None).unwrap();
    assert_eq!(out.record.duration_s, 45);
    assert!(out.record.note.contains("wall clock"));
}

#[test]
fn baseline_totals_and_duplicates() {
    let clock = start_clock();
    let mut s = session(ScriptedHost::new(), &clock);
    let ids = ["T1", "T2", "T3", "T4", "T5", "T6"];
    s.configure(project(&ids, &["se"]), "h").unwrap();
    let minutes = [10, 15, 5, 20, 12, 13];
    for (p, m) in ids.iter().zip(minutes) {
        s.record_manual_baseline(p, m * 60, false).unwrap();
    }
    let tables = fold_events(s.events());
    assert_eq!(tables.manual_session_seconds(), 75 * 60);

    let err = s.record_manual_baseline("T2", 60, false).unwrap_err();
    assert!(matches!(err, SessionError::DuplicateBaseline(_)));
    s.record_manual_baseline("T2", 16 * 60, true).unwrap();
    assert_eq!(fold_events(s.events()).manual_session_seconds(), 76 * 60);
}

#[test]
fn zero_duration_baseline_carries_a_warning() {
    let clock = start_clock();
    let mut s = session(ScriptedHost::new(), &clock);
    s.configure(project(&["T1"], &["se"]), "h").unwrap();
    let r = s.record_manual_baseline("T1", 0, false).unwrap();
    assert_eq!(r.duration_s, 0);
    assert!(r.note.contains("warning"));
}

#[test]
fn unknown_protocol_is_rejected() {
    let clock = start_clock();
    let mut s = session(ScriptedHost::new(), &clock);
    s.configure(project(&["T1"], &["se"]), "h").unwrap();
    assert!(matches!(s.record_manual_baseline("T9", 10, false), Err(SessionError::UnknownProtocol(_))));
}

#[test]
fn single_implementation_record() {
    let clock = start_clock();
    let s = ready(ScriptedHost::new(), &clock);
    let t = fold_events(s.events());
    assert_eq!(t.implementation_seconds(&key()), Some(3600));
}

#[test]
fn incomplete_baseline_lists_what_is_missing() {
    let clock = start_clock();
    let mut s = session(ScriptedHost::new(), &clock);
    s.configure(project(&["T1", "T2"], &["se"]), "h").unwrap();
    s.record_manual_baseline("T1", 60, false).unwrap();
    match s.start_replay(&versions(2), false) {
        Err(SessionError::IncompleteBaseline(missing)) => {
            assert!(missing.iter().any(|m| m.contains("manual baseline for T2")));
            assert!(missing.iter().any(|m| m.contains("implementation of T1/se")));
        }
        other => panic!("expected incomplete baseline, got {other:?}"),
    }
}

#[test]
fn project_locked_after_start() {
    let clock = start_clock();
    let mut s = ready(ScriptedHost::new(), &clock);
    s.start_replay(&versions(2), false).unwrap();
    assert!(matches!(s.configure(project(&["T1", "T2"], &["ea"]), "h2"), Err(SessionError::ProjectLocked)));
}

#[test]
fn all_pass_completes_in_m_steps_without_maintenance() {
    let clock = start_clock();
    let mut s = ready(ScriptedHost::new(), &clock);
    let m = 4;
    s.start_replay(&versions(m), false).unwrap();
    for i in 1..=m {
        assert_eq!(s.state().current_index(), Some(i));
        let runs = s.run_pending().unwrap();
        assert_eq!(runs.len(), 1);
        let out = s.advance_version(false).unwrap();
        if i < m {
            assert_eq!(out, AdvanceOutcome::Advanced { index: i + 1, build_ok: true });
        } else {
            assert_eq!(out, AdvanceOutcome::Completed);
        }
        consistent(&s);
    }
    assert_eq!(s.state().phase, Phase::Completed);
    let t = fold_events(s.events());
    assert!(t.maintenance.is_empty());
    let checkouts: Vec<usize> = s
        .events()
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::VersionCheckedOut { index, .. } => Some(*index),
            _ => None,
        })
        .collect();
    assert_eq!(checkouts, (1..=m).collect::<Vec<_>>());
}

#[test]
fn fail_fix_rerun_records_two_attempts() {
    let clock = start_clock();
    let mut host = ScriptedHost::new();
    host.script(2, key(), &[Outcome::Fail, Outcome::Pass]);
    let mut s = ready(host, &clock);
    s.start_replay(&versions(3), false).unwrap();
    s.run_pending().unwrap();
    s.advance_version(false).unwrap();

    let r1 = s.run_test(&key()).unwrap();
    assert_eq!((r1.attempt, r1.outcome), (1, Outcome::Fail));
    // failing tests demand classification first
    assert!(matches!(s.run_test(&key()), Err(SessionError::AwaitingClassification(_))));
    let actions = s.classify_failure(&key(), FailureKind::BrokenTest).unwrap();
    assert!(actions.script_update);
    let h = s.start_activity(ActivityCategory::RepairBrokenTest, &key()).unwrap();
    clock.advance(Duration::from_secs(600));
    s.stop_activity(Some(h), "selector changed", None).unwrap();
    let r2 = s.run_test(&key()).unwrap();
    assert_eq!((r2.attempt, r2.outcome), (2, Outcome::Pass));
    s.advance_version(false).unwrap();

    let t = fold_events(s.events());
    let at2: Vec<_> = t.runs.iter().filter(|r| r.version_index == 2).collect();
    assert_eq!(at2.len(), 2);
    assert_eq!(t.maintenance["ea"][&2][&ActivityCategory::RepairBrokenTest].seconds, 600);
    assert!(s.events().iter().any(|e| matches!(e.kind, EventKind::TestScriptUpdated { index: 2, .. })));
    consistent(&s);
}

#[test]
fn unfixed_failure_blocks_advance() {
    let clock = start_clock();
    let mut host = ScriptedHost::new();
    host.script(1, key(), &[Outcome::Fail, Outcome::Fail]);
    let mut s = ready(host, &clock);
    s.start_replay(&versions(2), false).unwrap();
    s.run_test(&key()).unwrap();
    match s.advance_version(false) {
        Err(SessionError::Blocked(why)) => assert!(why.iter().any(|w| w.contains("T1/ea"))),
        other => panic!("expected blocked, got {other:?}"),
    }
    s.classify_failure(&key(), FailureKind::BrokenTest).unwrap();
    s.run_test(&key()).unwrap();
    assert!(matches!(s.advance_version(false), Err(SessionError::Blocked(_))));
    assert_eq!(s.state().current_index(), Some(1));
}

#[test]
fn bug_classification_needs_record() {
    let clock = start_clock();
    let mut host = ScriptedHost::new();
    host.script(1, key(), &[Outcome::Fail]);
    let mut s = ready(host, &clock);
    s.start_replay(&versions(2), false).unwrap();
    s.run_test(&key()).unwrap();
    let actions = s.classify_failure(&key(), FailureKind::Bug).unwrap();
    assert!(actions.bug_record);
    let h = s.start_activity(ActivityCategory::HandleBug, &key()).unwrap();
    clock.advance(Duration::from_secs(120));
    s.stop_activity(Some(h), "", None).unwrap();
    s.run_test(&key()).unwrap();
    assert!(matches!(s.advance_version(false), Err(SessionError::Blocked(_))));
    assert!(matches!(s.record_bug(h.activity_id + 1, "x", BugResolution::Fix), Err(SessionError::NotABugActivity(_))));
    s.record_bug(h.activity_id, "null check missing", BugResolution::Workaround).unwrap();
    s.advance_version(false).unwrap();
    let t = fold_events(s.events());
    assert_eq!(t.bugs.len(), 1);
    assert_eq!(t.bugs[0].activity_id, h.activity_id);
}

#[test]
fn classification_without_failure() {
    let clock = start_clock();
    let mut s = ready(ScriptedHost::new(), &clock);
    s.start_replay(&versions(2), false).unwrap();
    assert!(matches!(s.classify_failure(&key(), FailureKind::FalseNegative), Err(SessionError::NoAttempt(_))));
    s.run_test(&key()).unwrap();
    assert!(matches!(s.classify_failure(&key(), FailureKind::Bug), Err(SessionError::NoFailingAttempt(_))));
    assert!(matches!(s.classify_failure(&key(), FailureKind::BrokenTest), Err(SessionError::NoFailingAttempt(_))));
    // a passing test can still be flagged as a false negative
    s.classify_failure(&key(), FailureKind::FalseNegative).unwrap();
    let h = s.start_activity(ActivityCategory::HandleFalseNegative, &key()).unwrap();
    clock.advance(Duration::from_secs(30));
    s.stop_activity(Some(h), "", None).unwrap();
    s.advance_version(false).unwrap();
}

#[test]
fn crash_reruns_automatically() {
    let clock = start_clock();
    let mut host = ScriptedHost::new();
    host.script(1, key(), &[Outcome::Fail, Outcome::Pass]);
    let mut s = ready(host, &clock);
    s.start_replay(&versions(1), false).unwrap();
    s.run_test(&key()).unwrap();
    let actions = s.classify_failure(&key(), FailureKind::Crash).unwrap();
    assert!(actions.automatic_rerun);
    let h = s.start_activity(ActivityCategory::HandleCrash, &key()).unwrap();
    clock.advance(Duration::from_secs(40));
    let out = s.stop_activity(Some(h), "", None).unwrap();
    let rerun = out.rerun.expect("re-run");
    assert_eq!((rerun.attempt, rerun.outcome), (2, Outcome::Pass));
    assert_eq!(s.advance_version(false).unwrap(), AdvanceOutcome::Completed);
}

#[test]
fn failed_build_blocks_until_reverified() {
    let clock = start_clock();
    let mut host = ScriptedHost::new();
    host.fail_build(1, 1);
    let mut s = ready(host, &clock);
    s.start_replay(&versions(2), false).unwrap();
    assert!(matches!(s.run_test(&key()), Err(SessionError::BuildNotVerified(1))));
    assert!(matches!(s.advance_version(false), Err(SessionError::Blocked(_))));
    assert!(s.prepare_version(false).unwrap());
    let builds: Vec<bool> = s
        .events()
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::BuildVerified { index: 1, ok, .. } => Some(*ok),
            _ => None,
        })
        .collect();
    assert_eq!(builds, vec![false, true]);
    s.run_pending().unwrap();
    s.advance_version(false).unwrap();
    consistent(&s);
}

#[test]
fn maintenance_needs_replay_phase() {
    let clock = start_clock();
    let mut s = ready(ScriptedHost::new(), &clock);
    assert!(matches!(
        s.start_activity(ActivityCategory::RepairBrokenTest, &key()),
        Err(SessionError::CategoryNotAllowed { .. })
    ));
}

#[test]
fn timed_implementation_becomes_baseline() {
    let clock = start_clock();
    let mut s = session(ScriptedHost::new(), &clock);
    s.configure(project(&["T1"], &["ea"]), "h").unwrap();
    let h = s.start_activity(ActivityCategory::Implementation, &key()).unwrap();
    clock.advance(Duration::from_secs(1500));
    s.stop_activity(Some(h), "", None).unwrap();
    assert_eq!(fold_events(s.events()).implementation_seconds(&key()), Some(1500));
    assert!(s.state().implementation.contains(&key()));
}

#[derive(Debug, Clone)]
enum Op {
    Run(usize),
    Classify(usize, FailureKind),
    Start(usize, ActivityCategory),
    Stop(u64),
    Bug,
    Build,
    Advance,
}

fn op() -> impl Strategy<Value = Op> {
    let kind = prop_oneof![
        Just(FailureKind::Bug),
        Just(FailureKind::BrokenTest),
        Just(FailureKind::FalseNegative),
        Just(FailureKind::Crash),
    ];
    let cat = prop::sample::select(ActivityCategory::MAINTENANCE.to_vec());
    prop_oneof![
        4 => (0..4usize).prop_map(Op::Run),
        2 => (0..4usize, kind).prop_map(|(t, k)| Op::Classify(t, k)),
        2 => (0..4usize, cat).prop_map(|(t, c)| Op::Start(t, c)),
        2 => (1..300u64).prop_map(Op::Stop),
        1 => Just(Op::Bug),
        1 => Just(Op::Build),
        3 => Just(Op::Advance),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Rebuilding from the ledger after any prefix gives the live state, and
    /// the session invariants hold throughout.
    #[test]
    fn state_matches_ledger_rebuild(
        fails in prop::collection::vec(((1..=4usize), 0..4usize, 1..3usize), 0..8),
        broken_builds in prop::collection::vec((1..=4usize, 1..3u32), 0..2),
        ops in prop::collection::vec(op(), 1..80),
    ) {
        let clock = start_clock();
        let keys = [
            TestKey::new("T1", "se"),
            TestKey::new("T1", "ea"),
            TestKey::new("T2", "se"),
            TestKey::new("T2", "ea"),
        ];
        let mut host = ScriptedHost::new();
        for (v, t, n) in &fails {
            host.script(*v, keys[*t].clone(), &vec![Outcome::Fail; *n]);
        }
        for (v, n) in &broken_builds {
            host.fail_build(*v, *n);
        }
        let mut s = session(host, &clock);
        s.configure(project(&["T1", "T2"], &["se", "ea"]), "h").unwrap();
        for p in ["T1", "T2"] {
            s.record_manual_baseline(p, 300, false).unwrap();
        }
        for k in &keys {
            s.record_implementation(k, 1800, false).unwrap();
        }
        s.start_replay(&versions(4), false).unwrap();
        let mut last_bug_activity = None;
        for o in ops {
            let before = s.state().current_index();
            let _ = match o {
                Op::Run(t) => s.run_test(&keys[t]).map(|_| ()),
                Op::Classify(t, k) => s.classify_failure(&keys[t], k).map(|_| ()),
                Op::Start(t, c) => s.start_activity(c, &keys[t]).map(|_| ()),
                Op::Stop(secs) => {
                    clock.advance(Duration::from_secs(secs));
                    s.stop_activity(None, "", None).map(|o| {
                        if o.record.category == ActivityCategory::HandleBug {
                            last_bug_activity = Some(o.record.activity_id);
                        }
                    })
                }
                Op::Bug => match last_bug_activity {
                    Some(id) => s.record_bug(id, "bug", BugResolution::Fix).map(|_| ()),
                    None => Ok(()),
                },
                Op::Build => s.prepare_version(false).map(|_| ()),
                Op::Advance => s.advance_version(false).map(|_| ()),
            };
            prop_assert_eq!(&SessionState::from_events(s.events()), s.state());
            // versions only move forward
            if let (Some(b), Some(a)) = (before, s.state().current_index()) {
                prop_assert!(a >= b);
            }
        }

        let events = s.events();
        // every stopped timer yields one record; at most one open timer
        let started = events.iter().filter(|e| matches!(e.kind, EventKind::ActivityStarted { .. })).count();
        let stopped = events.iter().filter(|e| matches!(e.kind, EventKind::ActivityStopped { .. })).count();
        prop_assert!(started == stopped || started == stopped + 1);

        // completed versions end with a passing attempt of every test
        let tables = fold_events(events);
        for e in events {
            if let EventKind::VersionCompleted { index } = e.kind {
                for k in &keys {
                    let last = tables
                        .runs
                        .iter()
                        .filter(|r| r.version_index == index && r.key() == *k)
                        .max_by_key(|r| r.attempt)
                        .map(|r| r.outcome);
                    prop_assert_eq!(last, Some(Outcome::Pass));
                }
            }
        }

        // folded maintenance equals the sum of stopped maintenance records
        for fw in ["se", "ea"] {
            for i in 1..=4 {
                let direct: u64 = events
                    .iter()
                    .filter_map(|e| match &e.kind {
                        EventKind::ActivityStopped { record }
                            if record.category.is_maintenance()
                                && record.framework.as_deref() == Some(fw)
                                && record.version_index == i =>
                        {
                            Some(record.duration_s)
                        }
                        _ => None,
                    })
                    .sum();
                prop_assert_eq!(tables.maintenance_seconds(fw, i, &Default::default()), direct);
            }
        }
    }
}
