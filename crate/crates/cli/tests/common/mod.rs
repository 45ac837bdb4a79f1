#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_replayroi");

fn git(dir: &Path, args: &[&str], date: Option<&str>) {
    let mut cmd = Command::new("git");
    cmd.current_dir(dir)
        .args(["-c", "user.name=fixture", "-c", "user.email=fixture@example.com"])
        .args(args)
        .env("GIT_CONFIG_NOSYSTEM", "1")
        .env("HOME", dir);
    if let Some(d) = date {
        cmd.env("GIT_AUTHOR_DATE", d).env("GIT_COMMITTER_DATE", d);
    }
    let out = cmd.output().expect("git runs");
    assert!(out.status.success(), "git {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// A repository with one commit per entry of `dates` (RFC 3339), on `main`.
pub fn git_repo(dir: &Path, dates: &[String]) {
    std::fs::create_dir_all(dir).unwrap();
    git(dir, &["init", "-q", "-b", "main"], None);
    for (i, d) in dates.iter().enumerate() {
        std::fs::write(dir.join("app.txt"), format!("revision {i}\n")).unwrap();
        git(dir, &["add", "app.txt"], None);
        git(dir, &["commit", "-q", "-m", &format!("revision {i}")], Some(d));
    }
}

/// Daily commits at noon from 2024-01-01.
pub fn daily(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("2024-01-{:02}T12:00:00+00:00", i + 1)).collect()
}

/// Test script failing the first attempt of every `PROTOCOL-FRAMEWORK-INDEX`
/// listed in `$FAIL_AT`, passing afterwards.
pub const CHECK_SH: &str = r#"#!/bin/sh
key="$REPLAYROI_PROTOCOL-$REPLAYROI_FRAMEWORK-$REPLAYROI_VERSION_INDEX"
case " $FAIL_AT " in *" $key "*) ;; *) exit 0;; esac
m="$STATE_DIR/done-$key"
[ -e "$m" ] && exit 0
touch "$m"
echo "assertion failed in $key" >&2
exit 1
"#;

pub struct Fixture {
    pub dir: tempfile::TempDir,
}

impl Fixture {
    /// Repo of `n` daily commits, two protocols, one or two frameworks and
    /// tests failing once at `fail_at` (`P-F-INDEX` words).
    pub fn new(n: usize, frameworks: &[(&str, &str)], fail_at: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        git_repo(&root.join("repo"), &daily(n));
        std::fs::create_dir(root.join("state")).unwrap();
        let script = root.join("check.sh");
        std::fs::write(&script, CHECK_SH).unwrap();
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755)).unwrap();

        let mut toml = String::from(
            r#"[project]
name = "fixture"

[repository]
path = "repo"
branch = "main"
strategy = "interval:1d"

[[protocols]]
id = "T1"
title = "Log in"

[[protocols]]
id = "T2"
title = "Search"
"#,
        );
        for (id, name) in frameworks {
            toml.push_str(&format!("\n[[frameworks]]\nid = \"{id}\"\nname = \"{name}\"\n"));
        }
        for p in ["T1", "T2"] {
            for (id, _) in frameworks {
                toml.push_str(&format!(
                    "\n[[tests]]\nprotocol = \"{p}\"\nframework = \"{id}\"\nrun = \"FAIL_AT='{fail_at}' STATE_DIR='{}' '{}'\"\n",
                    root.join("state").display(),
                    script.display()
                ));
            }
        }
        toml.push_str(
            "\n[mgt]\nfrequency = \"weekly\"\naccrual = \"per-step\"\n\n[estimate]\nmodel = \"log\"\nhorizon = 40\n",
        );
        std::fs::write(root.join("replayroi.toml"), toml).unwrap();
        Fixture { dir }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn config(&self) -> PathBuf {
        self.path().join("replayroi.toml")
    }

    pub fn ledger(&self) -> PathBuf {
        self.path().join("replayroi.ledger")
    }

    pub fn run(&self, args: &[&str]) -> Output {
        Command::new(BIN)
            .current_dir(self.path())
            .env_remove("REPLAYROI_LEDGER")
            .env_remove("REPLAYROI_TOKEN")
            .args(args)
            .output()
            .expect("binary runs")
    }

    /// Runs and asserts the exit status, returning stdout.
    pub fn ok(&self, args: &[&str]) -> String {
        self.expect(args, 0)
    }

    pub fn expect(&self, args: &[&str], code: i32) -> String {
        let out = self.run(args);
        assert_eq!(
            out.status.code(),
            Some(code),
            "{args:?}\nstdout: {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    pub fn json(&self, args: &[&str]) -> serde_json::Value {
        let mut a = vec!["--json"];
        a.extend_from_slice(args);
        serde_json::from_str(&self.ok(&a)).unwrap()
    }

    /// Records the whole baseline: manual minutes per protocol and
    /// implementation minutes per (protocol, framework).
    pub fn baseline(&self, manual: &[(&str, &str)], implementation: &[(&str, &str, &str)]) {
        for (p, m) in manual {
            self.ok(&["baseline", "record-manual", "--protocol", p, "--minutes", m]);
        }
        for (p, f, m) in implementation {
            self.ok(&["baseline", "record-impl", "--protocol", p, "--framework", f, "--minutes", m]);
        }
    }
}
