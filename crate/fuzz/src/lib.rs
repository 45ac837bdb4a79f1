//! Fuzz bodies shared by the libFuzzer targets and the corpus replay test.
//! Each one must never panic on any input; the asserts are round-trip
//! properties of whatever parses.

use std::path::Path;
use std::str::FromStr;

use replayroi_cli::ops::Op;
use replayroi_core::config::ProjectConfig;
use replayroi_core::estimator::{Accrual, CountMode, Frequency, ModelKind, Predictor};
use replayroi_core::history::{
    format_span, parse_git_log, parse_instant, parse_instant_end, parse_span, SentinelWindow, StrategyKind,
};
use replayroi_core::ledger::{fold_events, parse_event_line, parse_ledger};
use replayroi_core::model::TestKey;

pub fn ledger_line(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(e) = parse_event_line(text) {
        let line = serde_json::to_string(&e).expect("events serialize");
        let back = parse_event_line(&line).expect("a re-encoded event parses");
        assert_eq!(back, e);
    }
}

pub fn ledger_file(data: &[u8]) {
    let Ok(parsed) = parse_ledger(data) else {
        return;
    };
    assert!(parsed.valid_len <= data.len());
    let again = parse_ledger(&data[..parsed.valid_len]).expect("the valid prefix parses");
    assert_eq!(again.events, parsed.events);
    assert!(!again.torn_tail);
    let tables = fold_events(&parsed.events);
    assert_eq!(tables.last_seq, parsed.events.last().map_or(0, |e| e.seq));
}

pub fn config(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    match ProjectConfig::parse(text, Path::new("/replayroi.toml")) {
        Ok(cfg) => {
            let p = &cfg.project;
            for t in &p.tests {
                assert!(p.protocols.iter().any(|x| x.id == t.protocol));
                assert!(p.frameworks.iter().any(|x| x.id == t.framework));
            }
            assert_eq!(cfg.hash.len(), 64);
        }
        Err(e) => assert!(e.to_string().starts_with("/replayroi.toml")),
    }
}

pub fn selection(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    for line in text.lines() {
        if let Ok(k) = StrategyKind::from_str(line) {
            if !matches!(k, StrategyKind::Explicit { .. }) {
                assert_eq!(StrategyKind::from_str(&k.to_string()).ok(), Some(k));
            }
        }
        if let Ok(w) = SentinelWindow::from_str(line) {
            assert!(w.start < w.end && w.period_s > 0);
            assert_eq!(SentinelWindow::from_str(&w.to_string()).ok(), Some(w));
        }
        if let Ok(s) = parse_span(line) {
            assert!(s > 0);
            assert_eq!(parse_span(&format_span(s)), Ok(s));
        }
        if let (Ok(a), Ok(b)) = (parse_instant(line), parse_instant_end(line)) {
            assert!(a <= b);
        }
    }
}

pub fn git_log(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(commits) = parse_git_log(text) {
        assert!(commits.iter().all(|c| !c.id.is_empty()));
    }
}

pub fn command_body(data: &[u8]) {
    if let Ok(op) = serde_json::from_slice::<Op>(data) {
        let v = serde_json::to_value(&op).expect("ops serialize");
        assert_eq!(serde_json::from_value::<Op>(v).ok(), Some(op));
    }
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(k) = TestKey::from_str(text) {
            assert_eq!(TestKey::from_str(&k.to_string()).ok(), Some(k));
        }
    }
}

pub fn estimate_options(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    for word in text.split_whitespace() {
        let _ = Frequency::from_str(word);
        let _ = Accrual::from_str(word);
        let _ = ModelKind::from_str(word);
        let _ = Predictor::from_str(word);
        let _ = CountMode::from_str(word);
    }
}
