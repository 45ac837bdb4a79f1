use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use replayroi_core::config::{template, ProjectConfig};
use replayroi_core::estimator::{estimate, EstimateConfig};
use replayroi_core::history::{
    load_commit_history, parse_instant, parse_instant_end, select_versions, GitCli, SelectionStrategy, SentinelWindow,
    StrategyKind,
};
use replayroi_core::ledger::fold_events;
use replayroi_core::report::{build_bundle, export_csv, framework_name, render_csv, render_text, roi_line};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{
    ActivityCmd, BaselineCmd, Cli, Command, DurationArgs, EstimateFlags, ExportFormat, FailureArg, ReplayCmd,
    ReportFormat, ResolutionArg, VersionsCmd,
};
use crate::context::Context;
use crate::error::CliError;
use crate::ops::{self, Op, StatusView};

/// What a subcommand prints: JSON under `--json`, text otherwise.
pub struct Output {
    pub value: Value,
    pub text: String,
}

impl Output {
    fn new(value: impl Serialize, text: impl Into<String>) -> Self {
        Output { value: serde_json::to_value(value).expect("serializable"), text: text.into() }
    }
}

pub fn dispatch(cli: &Cli) -> Result<Output, CliError> {
    let ctx = || Context::load(&cli.config, cli.ledger.as_deref());
    match &cli.command {
        Command::Init(a) => init(&cli.config, &a.name, &a.repo, &a.branch, a.force),
        Command::Versions(VersionsCmd::Select(a)) => {
            let ctx = ctx()?;
            select(&ctx, a.strategy.as_deref(), a.from.as_deref(), a.to.as_deref(), &a.sentinels, a.branch.as_deref())
        }
        Command::Versions(VersionsCmd::List) => {
            let ctx = ctx()?;
            let seq = ctx.load_versions()?;
            let text = seq
                .entries
                .iter()
                .map(|v| format!("{:>4}  {}  {}", v.index, v.calendar_time.format("%Y-%m-%d %H:%M"), v.commit.id))
                .collect::<Vec<_>>()
                .join("\n");
            Ok(Output::new(&seq, text))
        }
        Command::Baseline(BaselineCmd::Status) => {
            let ctx = ctx()?;
            let view = StatusView::of(ctx.open_session()?.state());
            let text = if view.missing_baseline.is_empty() {
                "baseline complete".to_string()
            } else {
                format!("missing:\n  {}", view.missing_baseline.join("\n  "))
            };
            Ok(Output::new(json!({ "missing": view.missing_baseline }), text))
        }
        Command::Baseline(BaselineCmd::RecordManual { protocol, duration, overwrite }) => session_op(
            &ctx()?,
            Op::RecordManual { protocol: protocol.clone(), seconds: seconds(duration)?, overwrite: *overwrite },
        ),
        Command::Baseline(BaselineCmd::RecordImpl { protocol, framework, duration, overwrite }) => session_op(
            &ctx()?,
            Op::RecordImpl {
                protocol: protocol.clone(),
                framework: framework.clone(),
                seconds: seconds(duration)?,
                overwrite: *overwrite,
            },
        ),
        Command::Replay(ReplayCmd::Status) => {
            let ctx = ctx()?;
            let view = StatusView::of(ctx.open_session()?.state());
            let text = view.render();
            Ok(Output::new(&view, text.trim_end()))
        }
        Command::Replay(cmd) => session_op(&ctx()?, replay_op(cmd)),
        Command::Activity(ActivityCmd::Start { category, test }) => session_op(
            &ctx()?,
            Op::StartActivity { category: category.parse().map_err(CliError::Usage)?, test: test.clone() },
        ),
        Command::Activity(ActivityCmd::Stop { id, note, override_seconds }) => {
            session_op(&ctx()?, Op::StopActivity { id: *id, note: note.clone(), override_seconds: *override_seconds })
        }
        Command::Estimate(a) => {
            let ctx = ctx()?;
            let mut cfg = ctx.config.estimate.clone();
            apply_flags(&a.flags, &mut cfg)?;
            let tables = ctx.tables()?;
            let report = estimate(&tables, &cfg)?;
            let mut lines = vec![format!(
                "MGT: {} sessions of {} min",
                report.schedule.frequency,
                replayroi_core::report::fmt_min(report.schedule.session_cost)
            )];
            for f in &report.frameworks {
                let name = framework_name(tables.project.as_ref(), &f.framework);
                lines.push(roi_line(&f.roi, &name));
                if let Some(b) = &f.bayes {
                    lines.push(format!(
                        "  posterior alpha [{:.3}, {:.3}] beta [{:.3}, {:.3}] phi [{:.3}, {:.3}]{}",
                        b.alpha.lower,
                        b.alpha.upper,
                        b.beta.lower,
                        b.beta.upper,
                        b.phi.lower,
                        b.phi.upper,
                        if b.failed_diagnostics { " (diagnostics failed)" } else { "" }
                    ));
                }
            }
            lines.extend(report.warnings.iter().map(|w| format!("warning: {w}")));
            Ok(Output::new(&report, lines.join("\n")))
        }
        Command::Report(a) => {
            let ctx = ctx()?;
            let mut opts = ctx.report_options();
            apply_flags(&a.flags, &mut opts.estimate)?;
            if let Some(w) = a.bin_width {
                if !(w.is_finite() && w > 0.0) {
                    return Err(CliError::usage("--bin-width must be positive"));
                }
                opts.bin_width = w;
            }
            let tables = ctx.tables()?;
            let bundle = build_bundle(&tables, &opts);
            let body = match a.format {
                ReportFormat::Table => render_text(&tables, &bundle),
                ReportFormat::Csv => render_csv(&tables, &bundle),
                ReportFormat::Bundle => bundle_json(&bundle)?,
            };
            match &a.out {
                Some(path) => {
                    write_file(path, &body)?;
                    Ok(Output::new(
                        json!({ "written": path, "ledger_seq": bundle.provenance.ledger_seq }),
                        format!("wrote {}", path.display()),
                    ))
                }
                None if a.format == ReportFormat::Bundle => Ok(Output {
                    value: serde_json::to_value(&bundle).expect("serializable"),
                    text: body.trim_end().to_string(),
                }),
                None => Ok(Output::new(&bundle, body.trim_end())),
            }
        }
        Command::Export(a) => {
            let ctx = ctx()?;
            let events = ctx.events()?;
            match a.format {
                ExportFormat::Structured => {
                    let tables = fold_events(&events);
                    let doc = json!({ "events": events, "tables": tables });
                    let body = serde_json::to_string_pretty(&doc).expect("serializable");
                    match &a.out {
                        Some(p) => {
                            write_file(p, &body)?;
                            Ok(Output::new(json!({ "written": p }), format!("wrote {}", p.display())))
                        }
                        None => Ok(Output { value: doc, text: body }),
                    }
                }
                ExportFormat::Csv => {
                    let docs = export_csv(&fold_events(&events));
                    match &a.out {
                        Some(dir) => {
                            std::fs::create_dir_all(dir)
                                .map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
                            let mut written = Vec::new();
                            for (name, body) in &docs {
                                let p = dir.join(name);
                                write_file(&p, body)?;
                                written.push(p);
                            }
                            let text =
                                written.iter().map(|p| format!("wrote {}", p.display())).collect::<Vec<_>>().join("\n");
                            Ok(Output::new(json!({ "written": written }), text))
                        }
                        None => {
                            let text = docs.iter().map(|(n, b)| format!("# {n}\n{b}")).collect::<Vec<_>>().join("\n");
                            let value: serde_json::Map<String, Value> =
                                docs.into_iter().map(|(n, b)| (n.to_string(), Value::String(b))).collect();
                            Ok(Output { value: Value::Object(value), text: text.trim_end().to_string() })
                        }
                    }
                }
            }
        }
        Command::Serve(_) => Err(CliError::Internal("serve is dispatched separately".into())),
    }
}

fn replay_op(cmd: &ReplayCmd) -> Op {
    match cmd {
        ReplayCmd::Start { force } => Op::StartReplay { force: *force },
        ReplayCmd::Run { test } => Op::RunTest { test: test.clone() },
        ReplayCmd::Classify { test, kind } => Op::Classify {
            test: test.clone(),
            kind: match kind {
                FailureArg::Bug => replayroi_core::model::FailureKind::Bug,
                FailureArg::BrokenTest => replayroi_core::model::FailureKind::BrokenTest,
                FailureArg::FalseNegative => replayroi_core::model::FailureKind::FalseNegative,
                FailureArg::Crash => replayroi_core::model::FailureKind::Crash,
            },
        },
        ReplayCmd::Bug { activity, description, resolution } => Op::RecordBug {
            activity: *activity,
            description: description.clone(),
            resolution: match resolution {
                ResolutionArg::Fix => replayroi_core::model::BugResolution::Fix,
                ResolutionArg::Workaround => replayroi_core::model::BugResolution::Workaround,
            },
        },
        ReplayCmd::Rebuild => Op::Rebuild { force: false },
        ReplayCmd::Advance { force } => Op::Advance { force: *force },
        ReplayCmd::Status => unreachable!("status is not a session operation"),
    }
}

fn session_op(ctx: &Context, op: Op) -> Result<Output, CliError> {
    let mut session = ctx.open_session()?;
    let out = ops::apply(&mut session, &op, || ctx.load_versions())?;
    Ok(Output { value: out.value, text: out.text })
}

fn seconds(d: &DurationArgs) -> Result<u64, CliError> {
    match (d.minutes, d.seconds) {
        (_, Some(s)) => Ok(s),
        (Some(m), None) if m.is_finite() && m >= 0.0 => Ok((m * 60.0).round() as u64),
        (Some(m), None) => Err(CliError::usage(format!("invalid duration {m} min"))),
        (None, None) => Err(CliError::usage("give --minutes or --seconds")),
    }
}

fn parse<T: FromStr<Err = String>>(v: &Option<String>) -> Result<Option<T>, CliError> {
    v.as_deref().map(|s| s.parse::<T>().map_err(CliError::Usage)).transpose()
}

/// Overrides from the command line on top of the config's estimator settings.
pub fn apply_flags(f: &EstimateFlags, cfg: &mut EstimateConfig) -> Result<(), CliError> {
    if !f.frameworks.is_empty() {
        cfg.frameworks = f.frameworks.clone();
    }
    if let Some(v) = parse(&f.mgt)? {
        cfg.frequency = v;
    }
    if let Some(c) = f.mgt_cost {
        cfg.session_cost = Some(c);
    }
    if let Some(v) = parse(&f.accrual)? {
        cfg.accrual = v;
    }
    if let Some(v) = parse(&f.model)? {
        cfg.model = v;
    }
    if let Some(v) = parse(&f.predictor)? {
        cfg.predictor = v;
    }
    if let Some(v) = parse(&f.count_mode)? {
        cfg.mode = v;
    }
    if let Some(h) = f.horizon {
        cfg.horizon = h;
    }
    if let Some(s) = f.seed {
        cfg.mcmc.seed = s;
    }
    if let Some(c) = f.chains {
        cfg.mcmc.chains = c;
    }
    if let Some(w) = f.warmup {
        cfg.mcmc.warmup = w;
    }
    if let Some(d) = f.draws {
        cfg.mcmc.draws = d;
    }
    if f.exclude_bug_time {
        cfg.filter.include_bug_time = false;
    }
    if f.exclude_overrides {
        cfg.filter.include_overrides = false;
    }
    if f.allow_unconverged {
        cfg.allow_unconverged = true;
    }
    Ok(())
}

pub fn bundle_json(bundle: &replayroi_core::report::ReportBundle) -> Result<String, CliError> {
    serde_json::to_string_pretty(bundle).map_err(|e| CliError::Internal(e.to_string()))
}

fn write_file(path: &Path, body: &str) -> Result<(), CliError> {
    let mut f = std::fs::File::create(path).map_err(|e| CliError::io(format!("creating {}", path.display()), e))?;
    f.write_all(body.as_bytes())
        .and_then(|_| if body.ends_with('\n') { Ok(()) } else { f.write_all(b"\n") })
        .map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

fn init(config: &Path, name: &str, repo: &str, branch: &str, force: bool) -> Result<Output, CliError> {
    if config.exists() && !force {
        return Err(CliError::usage(format!("{} exists (pass --force to overwrite)", config.display())));
    }
    if let Some(dir) = config.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    }
    let text = template(name, repo, branch);
    // parse before writing so a bad --repo never leaves a broken file behind
    ProjectConfig::parse(&text, config)?;
    write_file(config, &text)?;
    Ok(Output::new(json!({ "written": config }), format!("wrote {}", config.display())))
}

fn select(
    ctx: &Context,
    strategy: Option<&str>,
    from: Option<&str>,
    to: Option<&str>,
    sentinels: &[String],
    branch: Option<&str>,
) -> Result<Output, CliError> {
    let cfg = &ctx.config;
    let mut range = cfg.range;
    if let Some(f) = from {
        range.from = Some(parse_instant(f).map_err(CliError::Usage)?);
    }
    if let Some(t) = to {
        range.to = Some(parse_instant_end(t).map_err(CliError::Usage)?);
    }
    let mut st = match strategy {
        Some(s) => SelectionStrategy::new(StrategyKind::from_str(s)?),
        None => match &cfg.strategy {
            Some(s) => s.clone(),
            None => return Err(CliError::usage("no strategy given (--strategy or repository.strategy)")),
        },
    };
    if strategy.is_some() || from.is_some() {
        st.anchor = range.from;
    }
    if !sentinels.is_empty() {
        st.sentinels.clear();
        for s in sentinels {
            st = st.with_sentinel(SentinelWindow::from_str(s)?);
        }
    }
    st.validate(Some(&range))?;
    let vcs = GitCli::new(&cfg.repo);
    let commits = load_commit_history(&vcs, branch.unwrap_or(&cfg.branch), &range)?;
    let seq = select_versions(&commits, &st)?;
    ctx.save_versions(&seq)?;
    let text = format!(
        "selected {} of {} commits ({}); wrote {}",
        seq.len(),
        commits.len(),
        seq.strategy.kind,
        cfg.versions_file.display()
    );
    Ok(Output::new(&seq, text))
}
