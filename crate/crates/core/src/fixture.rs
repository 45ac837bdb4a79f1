//! Synthetic ledger shaped like a one-year, two-framework replay: six
//! protocols, 65 replay steps, maintenance bursts at versions 7-15 and 31.
//! Per-category totals and occurrence counts are fixed; how they spread over
//! versions is made up.

use chrono::{DateTime, Duration, TimeZone, Utc};

use crate::exec::CommandSpec;
use crate::history::{CommitRef, SelectionStrategy, StrategyKind, VersionEntry, VersionSequence};
use crate::ledger::{Event, EventKind, Ledger};
use crate::model::{
    ActivityCategory, ActivityRecord, AutomatedTestRef, BugResolution, FailureKind, FrameworkId, Outcome, Project,
    TestKey, TestProtocol, TestRunRecord,
};
use crate::session::{ManualClock, ScriptedHost, Session};

pub const PROTOCOLS: [&str; 6] = ["T1", "T2", "T3", "T4", "T5", "T6"];
pub const STEPS: usize = 65;

/// Per-protocol implementation seconds.
pub const SELENIUM_IMPL_S: [u64; 6] = [41748, 3201, 25162, 23900, 30763, 12320];
pub const EYEAUTOMATE_IMPL_S: [u64; 6] = [20778, 1189, 7661, 17769, 11034, 13231];

/// (seconds, occurrences) per maintenance category, in `ActivityCategory::MAINTENANCE` order.
pub const SELENIUM_MAINT: [(u64, usize); 5] = [(5475, 19), (14831, 19), (2181, 24), (3399, 2), (2166, 4)];
pub const EYEAUTOMATE_MAINT: [(u64, usize); 5] = [(4041, 22), (34243, 22), (1827, 30), (614, 2), (243, 2)];

/// Versions with any maintenance.
pub const SELENIUM_ACTIVE_VERSIONS: usize = 28;
pub const EYEAUTOMATE_ACTIVE_VERSIONS: usize = 26;

pub const MANUAL_S: u64 = 750;
/// Mean wall time of one passing automated run.
pub const SELENIUM_RUN_MS: u64 = 75_000;
pub const EYEAUTOMATE_RUN_MS: u64 = 300_000;

pub fn project() -> Project {
    let protocols = PROTOCOLS
        .iter()
        .map(|id| TestProtocol {
            id: id.to_string(),
            title: format!("Protocol {id}"),
            description: String::new(),
            selected: true,
        })
        .collect();
    let frameworks = vec![
        FrameworkId { id: "se".into(), name: "Selenium".into() },
        FrameworkId { id: "ea".into(), name: "EyeAutomate".into() },
    ];
    let mut tests = Vec::new();
    for fw in ["se", "ea"] {
        for p in PROTOCOLS {
            tests.push(AutomatedTestRef {
                protocol: p.into(),
                framework: fw.into(),
                run_command: CommandSpec::shell("true"),
                script_locator: None,
            });
        }
    }
    Project { name: "study".into(), protocols, frameworks, tests }
}

/// A daily week, 52 weekly versions, then six more daily ones.
pub fn versions() -> Vec<VersionEntry> {
    let start = Utc.with_ymd_and_hms(2017, 1, 2, 12, 0, 0).unwrap();
    (1..=STEPS)
        .map(|i| {
            let day = match i {
                1..=7 => i - 1,
                8..=59 => 7 * (i - 7),
                _ => 364 + (i - 59),
            };
            let t = start + Duration::days(day as i64);
            VersionEntry {
                index: i,
                commit: CommitRef { id: format!("{:040x}", 0xc0ffee_u64 * 1000 + i as u64), timestamp: t, churn: None },
                label: format!("v{i}"),
                calendar_time: t,
            }
        })
        .collect()
}

fn burst_weight(index: usize) -> u64 {
    match index {
        7..=15 => 3,
        31 => 2,
        _ => 1,
    }
}

/// Bursts plus evenly spread quieter versions, `n` in total.
fn active_versions(n: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (7..=15).chain([31]).collect();
    let rest: Vec<usize> = (1..=STEPS).filter(|i| !v.contains(i)).collect();
    let k = n - v.len();
    v.extend((0..k).map(|j| rest[j * rest.len() / k]));
    v.sort_unstable();
    v
}

/// Maintenance activities of one framework as (version, category, seconds).
pub fn maintenance_plan(framework: &str) -> Vec<(usize, ActivityCategory, u64)> {
    let (maint, active) = match framework {
        "se" => (SELENIUM_MAINT, SELENIUM_ACTIVE_VERSIONS),
        _ => (EYEAUTOMATE_MAINT, EYEAUTOMATE_ACTIVE_VERSIONS),
    };
    let versions = active_versions(active);
    let mut slot = 0;
    let mut out = Vec::new();
    for (cat, (total, n)) in ActivityCategory::MAINTENANCE.iter().zip(maint) {
        let at: Vec<usize> = (0..n).map(|j| versions[(slot + j) % versions.len()]).collect();
        slot += n;
        let weights: Vec<u64> = at.iter().map(|&i| burst_weight(i)).collect();
        let sum: u64 = weights.iter().sum();
        let mut left = total;
        for (j, (&i, w)) in at.iter().zip(&weights).enumerate() {
            let s = if j + 1 == n { left } else { total * w / sum };
            left -= s;
            out.push((i, *cat, s));
        }
    }
    out.sort_by_key(|(i, c, _)| (*i, *c));
    out
}

struct Writer {
    ledger: Ledger,
    now: DateTime<Utc>,
    next_activity: u64,
}

impl Writer {
    fn push(&mut self, kind: EventKind) {
        self.ledger.append(self.now, kind).expect("fixture events are valid");
    }

    fn record(
        &mut self,
        category: ActivityCategory,
        index: usize,
        protocol: &str,
        fw: Option<&str>,
        s: u64,
    ) -> ActivityRecord {
        self.next_activity += 1;
        let started_at = self.now;
        self.now += Duration::seconds(s as i64);
        ActivityRecord {
            activity_id: self.next_activity,
            session_id: "study".into(),
            version_index: index,
            protocol: protocol.into(),
            framework: fw.map(str::to_string),
            category,
            started_at,
            stopped_at: self.now,
            duration_s: s,
            overridden: false,
            note: String::new(),
        }
    }
}

/// The complete replay as ledger events.
pub fn events() -> Vec<Event> {
    let mut w = Writer {
        ledger: Ledger::in_memory(),
        now: Utc.with_ymd_and_hms(2024, 1, 8, 8, 0, 0).unwrap(),
        next_activity: 0,
    };
    w.push(EventKind::ProjectConfigured { project: project(), config_hash: String::new() });
    for p in PROTOCOLS {
        let record = w.record(ActivityCategory::ManualBaseline, 0, p, None, MANUAL_S);
        w.push(EventKind::BaselineRecorded { record, overwrite: false });
    }
    for (fw, secs) in [("se", SELENIUM_IMPL_S), ("ea", EYEAUTOMATE_IMPL_S)] {
        for (p, s) in PROTOCOLS.iter().zip(secs) {
            let record = w.record(ActivityCategory::Implementation, 0, p, Some(fw), s);
            w.push(EventKind::BaselineRecorded { record, overwrite: false });
        }
    }
    let versions = versions();
    w.push(EventKind::SessionStarted {
        session_id: "study".into(),
        versions: versions.clone(),
        strategy: "fixture".into(),
    });
    let plans = [("se", maintenance_plan("se")), ("ea", maintenance_plan("ea"))];
    for v in &versions {
        let i = v.index;
        w.push(EventKind::VersionCheckedOut { index: i, commit_id: v.commit.id.clone() });
        w.push(EventKind::BuildVerified { index: i, ok: true, log_excerpt: String::new() });
        for (fw, plan) in &plans {
            let run_ms = if *fw == "se" { SELENIUM_RUN_MS } else { EYEAUTOMATE_RUN_MS };
            for (n, (_, cat, s)) in plan.iter().filter(|(at, _, _)| *at == i).enumerate() {
                let protocol = PROTOCOLS[n % PROTOCOLS.len()];
                w.push(EventKind::ActivityStarted {
                    activity_id: w.next_activity + 1,
                    category: *cat,
                    index: i,
                    protocol: protocol.into(),
                    framework: Some(fw.to_string()),
                });
                let record = w.record(*cat, i, protocol, Some(fw), *s);
                w.push(EventKind::ActivityStopped { record });
            }
            for p in PROTOCOLS {
                w.push(EventKind::TestRun {
                    record: TestRunRecord {
                        version_index: i,
                        protocol: p.into(),
                        framework: fw.to_string(),
                        outcome: Outcome::Pass,
                        attempt: 1,
                        elapsed_ms: run_ms,
                        note: String::new(),
                    },
                });
            }
        }
        w.push(EventKind::VersionCompleted { index: i });
    }
    w.push(EventKind::SessionCompleted);
    w.ledger.events().to_vec()
}

/// A randomized but valid replay over `m` versions with two protocols and
/// two frameworks, driven through a session with scripted test outcomes.
/// `ops` random commands are tried; rejected ones leave no events.
pub fn random_replay(seed: u64, m: usize, ops: usize) -> Vec<Event> {
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let protocols = ["T1", "T2"];
    let fws = ["se", "ea"];
    let keys: Vec<TestKey> = protocols.iter().flat_map(|p| fws.iter().map(move |f| TestKey::new(p, f))).collect();
    let mut host = ScriptedHost::new();
    for _ in 0..rng.random_range(0..=m * 2) {
        let v = rng.random_range(1..=m);
        let k = keys[rng.random_range(0..keys.len())].clone();
        let n = rng.random_range(1..3);
        host.script(v, k, &vec![Outcome::Fail; n]);
    }
    if rng.random_bool(0.3) {
        host.fail_build(rng.random_range(1..=m), 1);
    }
    let clock = ManualClock::new(Utc.with_ymd_and_hms(2024, 3, 1, 9, 0, 0).unwrap());
    let mut s = Session::new(Ledger::in_memory(), Box::new(host), Box::new(clock.clone()));
    let mut project = project();
    project.protocols.retain(|p| protocols.contains(&p.id.as_str()));
    project.tests.retain(|t| protocols.contains(&t.protocol.as_str()));
    s.configure(project, "random").expect("fresh session");
    for p in protocols {
        s.record_manual_baseline(p, rng.random_range(60..900), false).expect("baseline");
    }
    for k in &keys {
        s.record_implementation(k, rng.random_range(600..7200), false).expect("baseline");
    }
    let t0 = Utc.with_ymd_and_hms(2020, 1, 6, 12, 0, 0).unwrap();
    let entries = (1..=m)
        .map(|i| {
            let t = t0 + Duration::days(7 * i as i64);
            VersionEntry {
                index: i,
                commit: CommitRef { id: format!("{i:040x}"), timestamp: t, churn: None },
                label: format!("v{i}"),
                calendar_time: t,
            }
        })
        .collect();
    let versions =
        VersionSequence { entries, strategy: SelectionStrategy::new(StrategyKind::Interval { period_s: 7 * 86_400 }) };
    s.start_replay(&versions, false).expect("baselined");
    let kinds = [FailureKind::Bug, FailureKind::BrokenTest, FailureKind::FalseNegative, FailureKind::Crash];
    let mut bug_activity = None;
    for _ in 0..ops {
        let key = &keys[rng.random_range(0..keys.len())];
        let _ = match rng.random_range(0..14) {
            0..=3 => s.run_test(key).map(drop),
            4 | 5 => s.classify_failure(key, kinds[rng.random_range(0..4)]).map(drop),
            6 | 7 => {
                let c = ActivityCategory::MAINTENANCE[rng.random_range(0..5)];
                s.start_activity(c, key).map(drop)
            }
            8 | 9 => {
                clock.advance(std::time::Duration::from_secs(rng.random_range(1..3000)));
                let o = rng.random_bool(0.1).then(|| rng.random_range(1..5000));
                s.stop_activity(None, "", o).map(|o| {
                    if o.record.category == ActivityCategory::HandleBug {
                        bug_activity = Some(o.record.activity_id);
                    }
                })
            }
            10 => match bug_activity {
                Some(id) => s.record_bug(id, "bug", BugResolution::Fix).map(drop),
                None => Ok(()),
            },
            11 => s.prepare_version(false).map(drop),
            _ => s.advance_version(false).map(drop),
        };
    }
    s.events().to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{fold_events, summary_stats, MaintenanceFilter};

    #[test]
    fn plan_matches_category_totals() {
        for (fw, maint, active) in
            [("se", SELENIUM_MAINT, SELENIUM_ACTIVE_VERSIONS), ("ea", EYEAUTOMATE_MAINT, EYEAUTOMATE_ACTIVE_VERSIONS)]
        {
            let plan = maintenance_plan(fw);
            for (cat, (total, n)) in ActivityCategory::MAINTENANCE.iter().zip(maint) {
                let xs: Vec<u64> = plan.iter().filter(|(_, c, _)| c == cat).map(|(_, _, s)| *s).collect();
                assert_eq!(xs.len(), n);
                assert_eq!(xs.iter().sum::<u64>(), total);
            }
            let mut at: Vec<usize> = plan.iter().map(|(i, _, _)| *i).collect();
            at.dedup();
            assert_eq!(at.len(), active);
            assert!((7..=15).chain([31]).all(|i| at.contains(&i)));
        }
    }

    #[test]
    fn folds_cleanly() {
        let t = fold_events(&events());
        assert!(t.excluded.is_empty());
        assert!(t.open_activities.is_empty());
        assert_eq!(t.version_count(), STEPS);
        let s = summary_stats(&t, &MaintenanceFilter::default());
        assert_eq!(s.framework("se").unwrap().versions_with_maintenance, 28);
        assert_eq!(s.framework("ea").unwrap().versions_with_maintenance, 26);
    }

    #[test]
    fn random_replays_are_varied_and_reproducible() {
        assert_eq!(random_replay(1, 4, 200), random_replay(1, 4, 200));
        let mut kinds = std::collections::BTreeSet::new();
        for seed in 0..20 {
            for e in random_replay(seed, 4, 200) {
                kinds.insert(e.kind.name());
            }
        }
        for k in ["ActivityStopped", "FailureClassified", "VersionCompleted", "TestRun", "BugRecorded"] {
            assert!(kinds.contains(k), "{k} never generated: {kinds:?}");
        }
    }
}
