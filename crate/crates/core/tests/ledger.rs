use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use replayroi_core::fixture;
use replayroi_core::ledger::{fold_events, Event, Folder, Ledger};

fn write_all(path: &Path, events: &[Event]) -> Ledger {
    let mut l = Ledger::open(path).unwrap();
    for e in events {
        l.append(e.at, e.kind.clone()).unwrap();
    }
    l
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    /// Folding a stored snapshot and then the tail equals folding everything.
    #[test]
    fn snapshot_then_tail_equals_full_fold(
        seed in any::<u64>(),
        m in 1..6usize,
        ops in 0..160usize,
        cut in 0.0..=1.0f64,
    ) {
        let events = fixture::random_replay(seed, m, ops);
        let full = fold_events(&events);
        let k = (cut * events.len() as f64) as usize;

        let mut head = Folder::new();
        head.apply_all(&events[..k]);
        let stored = serde_json::to_string(&head).unwrap();
        let mut resumed: Folder = serde_json::from_str(&stored).unwrap();
        resumed.apply_all(&events[k..]);
        prop_assert_eq!(resumed.finish(), full.clone());

        let mut ledger = Ledger::in_memory();
        for e in &events {
            ledger.append(e.at, e.kind.clone()).unwrap();
        }
        let snap = ledger.snapshot(k as u64);
        prop_assert_eq!(snap.as_slice(), &events[..k]);
        prop_assert_eq!(fold_events(ledger.events()), full);
    }
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("l.ndjson");
    let events = fixture::events();
    drop(write_all(&path, &events));
    assert_eq!(Ledger::read_only(&path).unwrap(), events);
    let reopened = Ledger::open(&path).unwrap();
    assert_eq!(reopened.events(), events.as_slice());
    assert!(!reopened.recovered_torn_tail());
}

#[test]
fn torn_tail_is_dropped_and_totals_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("l.ndjson");
    let events = fixture::random_replay(3, 4, 300);
    drop(write_all(&path, &events));
    let before = fold_events(&Ledger::read_only(&path).unwrap());
    let size = std::fs::metadata(&path).unwrap().len();

    let mut f = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
    f.write_all(br#"{"schema":1,"seq":999,"at":"2024-03-01T09:00:00Z","kind":"Activ"#).unwrap();
    drop(f);

    let mut l = Ledger::open(&path).unwrap();
    assert!(l.recovered_torn_tail());
    assert_eq!(std::fs::metadata(&path).unwrap().len(), size);
    assert_eq!(fold_events(l.events()), before);
    let last = events.last().unwrap();
    let seq = l.append(last.at, replayroi_core::ledger::EventKind::SessionCompleted).unwrap();
    assert_eq!(seq, events.len() as u64 + 1);
}

const CHILD_ENV: &str = "REPLAYROI_TEST_LEDGER_CHILD";

fn child_events() -> Vec<Event> {
    fixture::random_replay(11, 60, 40_000)
}

/// Runs only as the child of `killed_writer_recovers`: appends until killed.
#[test]
#[ignore]
fn writer_child() {
    let Ok(path) = std::env::var(CHILD_ENV) else {
        return;
    };
    let mut l = Ledger::open(&path).unwrap();
    for e in child_events() {
        l.append(e.at, e.kind).unwrap();
    }
    std::thread::sleep(Duration::from_secs(60));
}

#[test]
fn killed_writer_recovers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("l.ndjson");
    let mut child = std::process::Command::new(std::env::current_exe().unwrap())
        .args(["writer_child", "--exact", "--ignored", "--nocapture"])
        .env(CHILD_ENV, &path)
        .stdout(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(60);
    while std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0) < 200_000 {
        assert!(Instant::now() < deadline, "child wrote too little");
        std::thread::sleep(Duration::from_millis(5));
    }
    child.kill().unwrap();
    child.wait().unwrap();

    let l = Ledger::open(&path).unwrap();
    let n = l.events().len();
    assert!(n > 0);
    // whatever survived is an exact prefix, with the same totals as that prefix
    let expected: Vec<Event> = {
        let mut mem = Ledger::in_memory();
        for e in child_events().into_iter().take(n) {
            mem.append(e.at, e.kind).unwrap();
        }
        mem.events().to_vec()
    };
    assert_eq!(l.events(), expected.as_slice());
    assert_eq!(fold_events(l.events()), fold_events(&expected));
    let reread = Ledger::read_only(&path).unwrap();
    assert_eq!(reread.len(), n);
}
