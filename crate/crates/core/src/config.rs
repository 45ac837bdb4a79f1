//! The project config file (TOML).

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;
use toml::Spanned;

use crate::estimator::{EstimateConfig, McmcConfig, PhiPrior, Priors};
use crate::exec::CommandSpec;
use crate::history::{parse_instant, parse_instant_end, SelectionStrategy, SentinelWindow, StrategyKind, TimeRange};
use crate::ledger::MaintenanceFilter;
use crate::model::{AutomatedTestRef, FrameworkId, Project, TestProtocol};
use crate::report::{ReportOptions, DEFAULT_BIN_WIDTH};

pub const DEFAULT_FILE: &str = "replayroi.toml";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Syntax { path: PathBuf, message: String },
    #[error("{path}:{line}: `{field}`: {message}")]
    Field { path: PathBuf, line: usize, field: String, message: String },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    project: RawProject,
    repository: RawRepository,
    #[serde(default)]
    protocols: Vec<RawProtocol>,
    #[serde(default)]
    frameworks: Vec<RawFramework>,
    #[serde(default)]
    tests: Vec<RawTest>,
    #[serde(default)]
    mgt: RawMgt,
    #[serde(default)]
    estimate: RawEstimate,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProject {
    name: String,
    #[serde(default)]
    ledger: Option<Spanned<String>>,
    #[serde(default)]
    versions: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRepository {
    path: Spanned<String>,
    #[serde(default = "default_branch")]
    branch: String,
    #[serde(default)]
    workspace: Option<Spanned<String>>,
    #[serde(default)]
    from: Option<Spanned<String>>,
    #[serde(default)]
    to: Option<Spanned<String>>,
    #[serde(default)]
    strategy: Option<Spanned<String>>,
    #[serde(default)]
    sentinels: Vec<Spanned<String>>,
    #[serde(default)]
    build: Option<CommandSpec>,
}

fn default_branch() -> String {
    "main".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProtocol {
    id: Spanned<String>,
    #[serde(default)]
    title: String,
    #[serde(default)]
    description: String,
    #[serde(default = "yes")]
    selected: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFramework {
    id: Spanned<String>,
    #[serde(default)]
    name: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTest {
    protocol: Spanned<String>,
    framework: Spanned<String>,
    run: CommandSpec,
    #[serde(default)]
    script: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMgt {
    #[serde(default)]
    frequency: Option<Spanned<String>>,
    #[serde(default)]
    session_cost: Option<Spanned<f64>>,
    #[serde(default)]
    accrual: Option<Spanned<String>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEstimate {
    #[serde(default)]
    model: Option<Spanned<String>>,
    #[serde(default)]
    predictor: Option<Spanned<String>>,
    #[serde(default)]
    mode: Option<Spanned<String>>,
    #[serde(default)]
    horizon: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    chains: Option<Spanned<usize>>,
    #[serde(default)]
    warmup: Option<usize>,
    #[serde(default)]
    draws: Option<usize>,
    #[serde(default)]
    phi_prior: Option<Spanned<String>>,
    #[serde(default)]
    exclude_bug_time: bool,
    #[serde(default)]
    exclude_overrides: bool,
    #[serde(default)]
    allow_unconverged: bool,
    #[serde(default)]
    bin_width: Option<Spanned<f64>>,
}

/// A loaded, validated project config. Relative paths are resolved against
/// the directory holding the file.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectConfig {
    pub path: PathBuf,
    pub dir: PathBuf,
    pub name: String,
    pub ledger: PathBuf,
    pub versions_file: PathBuf,
    pub repo: PathBuf,
    pub branch: String,
    pub workspace: PathBuf,
    pub range: TimeRange,
    pub strategy: Option<SelectionStrategy>,
    pub build: CommandSpec,
    pub project: Project,
    pub estimate: EstimateConfig,
    pub bin_width: f64,
    /// sha256 of the file bytes.
    pub hash: String,
}

impl ProjectConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text, path)
    }

    /// Parses `text` as if read from `path`.
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| syntax(path, text, &e))?;
        let dir = path
            .parent()
            .map(|p| if p.as_os_str().is_empty() { Path::new(".") } else { p })
            .unwrap_or(Path::new("."))
            .to_path_buf();
        let field = |span: std::ops::Range<usize>, name: &str, message: String| ConfigError::Field {
            path: path.to_path_buf(),
            line: line_of(text, span.start),
            field: name.to_string(),
            message,
        };
        let resolve = |p: &str| -> PathBuf {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                dir.join(p)
            }
        };

        let repo = resolve(raw.repository.path.get_ref());
        if !repo.exists() {
            return Err(field(
                raw.repository.path.span(),
                "repository.path",
                format!("{} does not exist", repo.display()),
            ));
        }
        let workspace = match &raw.repository.workspace {
            Some(w) => {
                let p = resolve(w.get_ref());
                if !p.exists() {
                    return Err(field(w.span(), "repository.workspace", format!("{} does not exist", p.display())));
                }
                p
            }
            None => repo.clone(),
        };
        let ledger = match &raw.project.ledger {
            Some(l) => {
                let p = resolve(l.get_ref());
                let parent = p.parent().filter(|d| !d.as_os_str().is_empty());
                if parent.is_some_and(|d| !d.exists()) {
                    return Err(field(
                        l.span(),
                        "project.ledger",
                        format!("directory of {} does not exist", p.display()),
                    ));
                }
                p
            }
            None => dir.join("replayroi.ledger"),
        };
        let versions_file = resolve(raw.project.versions.as_deref().unwrap_or("versions.json"));

        let instant = |s: &Option<Spanned<String>>, name: &str, end: bool| -> Result<_, ConfigError> {
            match s {
                None => Ok(None),
                Some(v) => {
                    let r = if end { parse_instant_end(v.get_ref()) } else { parse_instant(v.get_ref()) };
                    r.map(Some).map_err(|e| field(v.span(), name, e))
                }
            }
        };
        let range = TimeRange {
            from: instant(&raw.repository.from, "repository.from", false)?,
            to: instant(&raw.repository.to, "repository.to", true)?,
        };
        if let (Some(f), Some(t)) = (range.from, range.to) {
            if t < f {
                let span = raw.repository.to.as_ref().map(|s| s.span()).unwrap_or(0..0);
                return Err(field(span, "repository.to", "range ends before it starts".into()));
            }
        }
        let strategy = match &raw.repository.strategy {
            None => None,
            Some(s) => {
                let kind = StrategyKind::from_str(s.get_ref())
                    .map_err(|e| field(s.span(), "repository.strategy", e.to_string()))?;
                let mut st = SelectionStrategy::new(kind);
                if let Some(f) = range.from {
                    st = st.with_anchor(f);
                }
                for w in &raw.repository.sentinels {
                    let win = SentinelWindow::from_str(w.get_ref())
                        .map_err(|e| field(w.span(), "repository.sentinels", e.to_string()))?;
                    st = st.with_sentinel(win);
                }
                st.validate(Some(&range)).map_err(|e| field(s.span(), "repository.sentinels", e.to_string()))?;
                Some(st)
            }
        };

        let mut protocols = Vec::new();
        for p in &raw.protocols {
            if protocols.iter().any(|q: &TestProtocol| q.id == *p.id.get_ref()) {
                return Err(field(p.id.span(), "protocols.id", format!("duplicate protocol id `{}`", p.id.get_ref())));
            }
            if p.id.get_ref().trim().is_empty() || p.id.get_ref().contains('/') {
                return Err(field(p.id.span(), "protocols.id", "must be nonempty and free of `/`".into()));
            }
            protocols.push(TestProtocol {
                id: p.id.get_ref().clone(),
                title: if p.title.is_empty() { p.id.get_ref().clone() } else { p.title.clone() },
                description: p.description.clone(),
                selected: p.selected,
            });
        }
        let mut frameworks = Vec::new();
        for f in &raw.frameworks {
            if frameworks.iter().any(|g: &FrameworkId| g.id == *f.id.get_ref()) {
                return Err(field(
                    f.id.span(),
                    "frameworks.id",
                    format!("duplicate framework id `{}`", f.id.get_ref()),
                ));
            }
            if f.id.get_ref().trim().is_empty() || f.id.get_ref().contains('/') {
                return Err(field(f.id.span(), "frameworks.id", "must be nonempty and free of `/`".into()));
            }
            frameworks.push(FrameworkId {
                id: f.id.get_ref().clone(),
                name: f.name.clone().unwrap_or_else(|| f.id.get_ref().clone()),
            });
        }
        let mut tests: Vec<AutomatedTestRef> = Vec::new();
        for t in &raw.tests {
            if !protocols.iter().any(|p| p.id == *t.protocol.get_ref()) {
                return Err(field(
                    t.protocol.span(),
                    "tests.protocol",
                    format!("unknown protocol `{}`", t.protocol.get_ref()),
                ));
            }
            if !frameworks.iter().any(|f| f.id == *t.framework.get_ref()) {
                return Err(field(
                    t.framework.span(),
                    "tests.framework",
                    format!("unknown framework `{}`", t.framework.get_ref()),
                ));
            }
            if tests.iter().any(|u| u.protocol == *t.protocol.get_ref() && u.framework == *t.framework.get_ref()) {
                return Err(field(
                    t.protocol.span(),
                    "tests",
                    format!("duplicate test {}/{}", t.protocol.get_ref(), t.framework.get_ref()),
                ));
            }
            if t.run.argv.is_empty() {
                return Err(field(t.protocol.span(), "tests.run", "command is empty".into()));
            }
            tests.push(AutomatedTestRef {
                protocol: t.protocol.get_ref().clone(),
                framework: t.framework.get_ref().clone(),
                run_command: t.run.clone(),
                script_locator: t.script.clone(),
            });
        }
        let project = Project { name: raw.project.name.clone(), protocols, frameworks, tests };

        fn parsed<T: FromStr<Err = String>>(
            v: &Option<Spanned<String>>,
            name: &str,
            default: T,
            field: &dyn Fn(std::ops::Range<usize>, &str, String) -> ConfigError,
        ) -> Result<T, ConfigError> {
            match v {
                None => Ok(default),
                Some(s) => s.get_ref().parse().map_err(|e| field(s.span(), name, e)),
            }
        }
        let mut est = EstimateConfig::default();
        est.frequency = parsed(&raw.mgt.frequency, "mgt.frequency", est.frequency, &field)?;
        est.accrual = parsed(&raw.mgt.accrual, "mgt.accrual", est.accrual, &field)?;
        if let Some(c) = &raw.mgt.session_cost {
            if c.get_ref().is_nan() || *c.get_ref() <= 0.0 {
                return Err(field(c.span(), "mgt.session_cost", "must be > 0 minutes".into()));
            }
            est.session_cost = Some(*c.get_ref());
        }
        let e = &raw.estimate;
        est.model = parsed(&e.model, "estimate.model", est.model, &field)?;
        est.predictor = parsed(&e.predictor, "estimate.predictor", est.predictor, &field)?;
        est.mode = parsed(&e.mode, "estimate.mode", est.mode, &field)?;
        est.horizon = e.horizon.unwrap_or(est.horizon);
        let d = McmcConfig::default();
        est.mcmc = McmcConfig {
            chains: e.chains.as_ref().map(|c| *c.get_ref()).unwrap_or(d.chains),
            warmup: e.warmup.unwrap_or(d.warmup),
            draws: e.draws.unwrap_or(d.draws),
            seed: e.seed.unwrap_or(d.seed),
        };
        if let Some(c) = &e.chains {
            if *c.get_ref() < 2 {
                return Err(field(c.span(), "estimate.chains", "at least 2 chains are needed".into()));
            }
        }
        est.priors = Priors {
            phi: match &e.phi_prior {
                None => Priors::default().phi,
                Some(s) => match s.get_ref().as_str() {
                    "log-gamma" => PhiPrior::LogGamma { shape: 0.5, rate: 0.5 },
                    "exponential" => PhiPrior::Exponential { rate: 1.0 },
                    other => {
                        return Err(field(
                            s.span(),
                            "estimate.phi_prior",
                            format!("unknown prior `{other}` (log-gamma, exponential)"),
                        ))
                    }
                },
            },
            ..Priors::default()
        };
        est.filter =
            MaintenanceFilter { include_bug_time: !e.exclude_bug_time, include_overrides: !e.exclude_overrides };
        est.allow_unconverged = e.allow_unconverged;
        let bin_width = match &e.bin_width {
            None => DEFAULT_BIN_WIDTH,
            Some(w) if *w.get_ref() > 0.0 => *w.get_ref(),
            Some(w) => return Err(field(w.span(), "estimate.bin_width", "must be > 0".into())),
        };

        Ok(ProjectConfig {
            path: path.to_path_buf(),
            dir: dir.clone(),
            name: raw.project.name,
            ledger,
            versions_file,
            repo,
            branch: raw.repository.branch,
            workspace,
            range,
            strategy,
            build: raw.repository.build.unwrap_or_else(|| CommandSpec::shell("true")),
            project,
            estimate: est,
            bin_width,
            hash: hex::encode(Sha256::digest(text.as_bytes())),
        })
    }

    pub fn report_options(&self) -> ReportOptions {
        ReportOptions { estimate: self.estimate.clone(), bin_width: self.bin_width }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn syntax(path: &Path, text: &str, e: &toml::de::Error) -> ConfigError {
    match e.span() {
        Some(span) => ConfigError::Field {
            path: path.to_path_buf(),
            line: line_of(text, span.start),
            field: key_at(text, span.start).unwrap_or_default(),
            message: e.message().to_string(),
        },
        None => ConfigError::Syntax { path: path.to_path_buf(), message: e.message().to_string() },
    }
}

/// The key on the line holding `offset`, if that line is `key = ...`.
fn key_at(text: &str, offset: usize) -> Option<String> {
    let start = text[..offset.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = text[start..].lines().next()?;
    let (k, _) = line.split_once('=')?;
    let k = k.trim();
    (!k.is_empty() && !k.starts_with('[')).then(|| k.to_string())
}

/// Starter config written by `init`.
pub fn template(name: &str, repo: &str, branch: &str) -> String {
    format!(
        r#"[project]
name = "{name}"
ledger = "replayroi.ledger"
versions = "versions.json"

[repository]
path = "{repo}"
branch = "{branch}"
# from = "2017-01-01"
# to = "2017-12-31"
strategy = "interval:7d"
# sentinels = ["2017-01-01..2017-01-08:1d"]
build = "true"

# [[protocols]]
# id = "T1"
# title = "Log in and open the dashboard"

# [[frameworks]]
# id = "se"
# name = "Selenium"

# [[tests]]
# protocol = "T1"
# framework = "se"
# run = "./run-test.sh T1"

[mgt]
frequency = "weekly"
accrual = "calendar"

[estimate]
model = "log"
horizon = 52
seed = 20190422
"#
    )
}
