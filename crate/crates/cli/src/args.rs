use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "replayroi",
    version,
    about = "Replay a project's history to measure GUI test automation cost and estimate its return on investment"
)]
pub struct Cli {
    /// Project config file.
    #[arg(long, global = true, default_value = "replayroi.toml")]
    pub config: PathBuf,
    /// Ledger file; overrides the config.
    #[arg(long, global = true, env = "REPLAYROI_LEDGER", hide_env_values = true)]
    pub ledger: Option<PathBuf>,
    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a starter config file.
    Init(InitArgs),
    /// Select and list the versions to replay.
    #[command(subcommand)]
    Versions(VersionsCmd),
    /// Record manual baseline and implementation times.
    #[command(subcommand)]
    Baseline(BaselineCmd),
    /// Drive the step-wise replay.
    #[command(subcommand)]
    Replay(ReplayCmd),
    /// Start and stop timed activities.
    #[command(subcommand)]
    Activity(ActivityCmd),
    /// Fit cost models and compute break-even.
    Estimate(EstimateArgs),
    /// Render tables, series and the structured bundle.
    Report(ReportArgs),
    /// Dump the measurement tables.
    Export(ExportArgs),
    /// Serve the HTTP API, event stream and console assets.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long, default_value = "project")]
    pub name: String,
    /// Repository to replay, relative to the config file.
    #[arg(long, default_value = ".")]
    pub repo: String,
    #[arg(long, default_value = "main")]
    pub branch: String,
    /// Overwrite an existing config.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum VersionsCmd {
    /// Load the commit history and persist the selected versions.
    Select(SelectArgs),
    /// Show the persisted versions.
    List,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// interval:SPAN, churn:LINES or explicit:ID,ID,...
    #[arg(long)]
    pub strategy: Option<String>,
    /// Range start (date or RFC 3339 instant).
    #[arg(long)]
    pub from: Option<String>,
    /// Range end, inclusive.
    #[arg(long)]
    pub to: Option<String>,
    /// START..END:SPAN window sampled at a finer period; repeatable.
    #[arg(long = "sentinel")]
    pub sentinels: Vec<String>,
    #[arg(long)]
    pub branch: Option<String>,
}

#[derive(Debug, Args)]
pub struct DurationArgs {
    #[arg(long, conflicts_with = "seconds", required_unless_present = "seconds")]
    pub minutes: Option<f64>,
    #[arg(long)]
    pub seconds: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum BaselineCmd {
    /// Record the manual execution time of one protocol.
    RecordManual {
        #[arg(long)]
        protocol: String,
        #[command(flatten)]
        duration: DurationArgs,
        #[arg(long)]
        overwrite: bool,
    },
    /// Record the implementation time of one automated test.
    RecordImpl {
        #[arg(long)]
        protocol: String,
        #[arg(long)]
        framework: String,
        #[command(flatten)]
        duration: DurationArgs,
        #[arg(long)]
        overwrite: bool,
    },
    /// List baseline records still missing.
    Status,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FailureArg {
    Bug,
    BrokenTest,
    FalseNegative,
    Crash,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ResolutionArg {
    Fix,
    Workaround,
}

#[derive(Debug, Subcommand)]
pub enum ReplayCmd {
    /// Start the replay at version 1 (checkout and build).
    Start {
        /// Check out even if the workspace is dirty.
        #[arg(long)]
        force: bool,
    },
    /// Current version, test grid, timer and blockers.
    Status,
    /// Run one test (PROTOCOL/FRAMEWORK) or every test not yet passing.
    Run {
        #[arg(long)]
        test: Option<String>,
    },
    /// Classify the latest attempt of a test.
    Classify {
        #[arg(long)]
        test: String,
        #[arg(long, value_enum)]
        kind: FailureArg,
    },
    /// Link a bug record to a stopped handle_bug activity.
    Bug {
        #[arg(long)]
        activity: u64,
        #[arg(long)]
        description: String,
        #[arg(long, value_enum)]
        resolution: ResolutionArg,
    },
    /// Re-run the build of the current version.
    Rebuild,
    /// Complete the current version and move to the next.
    Advance {
        #[arg(long)]
        force: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum ActivityCmd {
    /// Start a timer.
    Start {
        /// analysis_broken_test, repair_broken_test, handle_bug,
        /// handle_false_negative, handle_crash, implementation or manual_baseline
        #[arg(long)]
        category: String,
        /// PROTOCOL/FRAMEWORK, or just PROTOCOL for manual_baseline.
        #[arg(long)]
        test: String,
    },
    /// Stop the running timer.
    Stop {
        #[arg(long)]
        id: Option<u64>,
        #[arg(long, default_value = "")]
        note: String,
        /// Replace the measured duration (flagged in the record).
        #[arg(long)]
        override_seconds: Option<u64>,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct EstimateFlags {
    /// Framework to estimate; repeatable, default all.
    #[arg(long = "framework")]
    pub frameworks: Vec<String>,
    /// Manual test schedule: weekly, monthly or per-version.
    #[arg(long)]
    pub mgt: Option<String>,
    /// Minutes per manual session; default is the recorded baseline total.
    #[arg(long)]
    pub mgt_cost: Option<f64>,
    /// calendar or per-step.
    #[arg(long)]
    pub accrual: Option<String>,
    /// observed, linear, log or bayes.
    #[arg(long)]
    pub model: Option<String>,
    /// step or log-step.
    #[arg(long)]
    pub predictor: Option<String>,
    /// cumulative or increments.
    #[arg(long)]
    pub count_mode: Option<String>,
    /// Steps to extrapolate past the last version.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub draws: Option<usize>,
    /// Leave handle_bug time out of maintenance.
    #[arg(long)]
    pub exclude_bug_time: bool,
    /// Leave manually overridden durations out of maintenance.
    #[arg(long)]
    pub exclude_overrides: bool,
    /// Report Bayesian results even when diagnostics fail.
    #[arg(long)]
    pub allow_unconverged: bool,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub flags: EstimateFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    Csv,
    Bundle,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    pub format: ReportFormat,
    /// Histogram bin width in minutes.
    #[arg(long)]
    pub bin_width: Option<f64>,
    /// Write to this file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub flags: EstimateFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Csv,
    Structured,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long, value_enum, default_value_t = ExportFormat::Structured)]
    pub format: ExportFormat,
    /// Output directory for csv, file for structured; default stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: String,
    /// Shared token required by command endpoints.
    #[arg(long, env = "REPLAYROI_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    /// Directory with console assets; default is the embedded page.
    #[arg(long)]
    pub assets: Option<PathBuf>,
}
