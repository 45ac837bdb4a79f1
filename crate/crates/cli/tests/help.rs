use clap::CommandFactory;
use replayroi_cli::args::Cli;

fn walk(cmd: &mut clap::Command, path: &str, out: &mut String) {
    let name = if path.is_empty() { cmd.get_name().to_string() } else { format!("{path} {}", cmd.get_name()) };
    out.push_str(&format!("==== {name}\n"));
    out.push_str(&cmd.render_long_help().to_string());
    out.push('\n');
    let mut subs: Vec<clap::Command> = cmd.get_subcommands().cloned().collect();
    for sub in &mut subs {
        walk(sub, &name, out);
    }
}

fn help_text() -> String {
    let mut cmd = Cli::command();
    cmd.build();
    let mut out = String::new();
    walk(&mut cmd, "", &mut out);
    out
}

#[test]
fn help_matches_snapshot() {
    let text = help_text();
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots/help.txt");
    if std::env::var_os("UPDATE_SNAPSHOTS").is_some() {
        std::fs::write(&path, &text).unwrap();
    }
    let want = std::fs::read_to_string(&path).expect("snapshot exists; run with UPDATE_SNAPSHOTS=1 to create it");
    assert_eq!(text, want, "help changed; rerun with UPDATE_SNAPSHOTS=1 and review the diff");
}

#[test]
fn help_lists_every_command_and_flag() {
    let text = help_text();
    for c in ["init", "versions", "baseline", "replay", "activity", "estimate", "report", "export", "serve"] {
        assert!(text.contains(&format!("==== replayroi {c}\n")), "{c}");
    }
    fn check(cmd: &clap::Command, text: &str) {
        for a in cmd.get_arguments() {
            if let Some(l) = a.get_long() {
                assert!(text.contains(&format!("--{l}")), "--{l} of {}", cmd.get_name());
            }
        }
        for s in cmd.get_subcommands() {
            assert!(text.contains(s.get_name()), "{}", s.get_name());
            check(s, text);
        }
    }
    let mut cmd = Cli::command();
    cmd.build();
    check(&cmd, &text);
    for env in ["REPLAYROI_TOKEN", "REPLAYROI_LEDGER"] {
        assert!(text.contains(env), "{env}");
    }
}
