//! Tables, plot-ready series and the structured bundle served to the console.

mod series;
mod table;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::estimator::{estimate, EstimateConfig, EstimateReport, RoiEstimate};
use crate::ledger::{
    execution_times, implementation_stats, summary_stats, ExecTimeTable, ImplementationRow, MeasurementTables,
    SummaryStats,
};

pub use series::{
    bands_table, curves_table, histogram, histogram_table, histograms, maintenance_series_all,
    maintenance_series_table, Bin, Histogram, MaintenanceSeries, SeriesPoint, DEFAULT_BIN_WIDTH,
};
pub use table::{
    execution_table, fmt_mean_sd, fmt_min, framework_name, implementation_table, maintenance_table, Table,
};

pub const BUNDLE_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub estimate: EstimateConfig,
    pub bin_width: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions { estimate: EstimateConfig::default(), bin_width: DEFAULT_BIN_WIDTH }
    }
}

impl ReportOptions {
    /// sha256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("options serialize");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub ledger_seq: u64,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub maintenance: Vec<MaintenanceSeries>,
    pub histograms: Vec<Histogram>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub schema: u32,
    pub provenance: Provenance,
    pub project: Option<String>,
    pub implementation: Vec<ImplementationRow>,
    pub maintenance: SummaryStats,
    pub execution: ExecTimeTable,
    pub series: Series,
    /// Absent when estimation is not possible yet; see `estimate_error`.
    pub estimate: Option<EstimateReport>,
    #[serde(default)]
    pub estimate_error: Option<String>,
    pub roi: Vec<RoiEstimate>,
}

/// Everything derivable from one ledger snapshot and the options. Pure.
pub fn build_bundle(tables: &MeasurementTables, opts: &ReportOptions) -> ReportBundle {
    let filter = opts.estimate.filter;
    let maintenance = maintenance_series_all(tables, &filter);
    let (est, err) = match estimate(tables, &opts.estimate) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    ReportBundle {
        schema: BUNDLE_SCHEMA,
        provenance: Provenance { ledger_seq: tables.last_seq, config_hash: opts.hash(), seed: opts.estimate.mcmc.seed },
        project: tables.project.as_ref().map(|p| p.name.clone()),
        implementation: implementation_stats(tables),
        maintenance: summary_stats(tables, &filter),
        execution: execution_times(tables),
        series: Series { histograms: histograms(&maintenance, opts.bin_width), maintenance },
        roi: est.iter().flat_map(|e| e.frameworks.iter().map(|f| f.roi.clone())).collect(),
        estimate: est,
        estimate_error: err,
    }
}

/// Implementation, maintenance and execution tables.
pub fn summary_tables(tables: &MeasurementTables, bundle: &ReportBundle) -> Vec<Table> {
    let project = tables.project.as_ref();
    vec![
        implementation_table(&bundle.implementation, &tables.protocols(), project),
        maintenance_table(&bundle.maintenance, project),
        execution_table(&bundle.execution, project),
    ]
}

/// Every table including the plot series.
pub fn all_tables(tables: &MeasurementTables, bundle: &ReportBundle) -> Vec<Table> {
    let mut out = summary_tables(tables, bundle);
    out.push(maintenance_series_table(&bundle.series.maintenance));
    out.push(histogram_table(&bundle.series.histograms));
    if let Some(est) = &bundle.estimate {
        out.push(curves_table(est));
        for f in &est.frameworks {
            if let Some(b) = &f.bands {
                out.push(bands_table(&f.framework, b));
            }
        }
    }
    out
}

pub fn roi_line(r: &RoiEstimate, name: &str) -> String {
    let mut s = match r.break_even_step {
        Some(k) => format!(
            "{name}: break-even at step {k} ({} min, {} h)",
            fmt_min(r.break_even_minutes.unwrap_or(0.0)),
            fmt_min(r.break_even_hours.unwrap_or(0.0))
        ),
        None => format!("{name}: no break-even within {} steps", r.horizon_step),
    };
    if let Some(t) = r.break_even_time {
        s.push_str(&format!(", {}", t.format("%Y-%m-%d")));
    }
    if let Some(iv) = &r.interval {
        let b = |v: Option<usize>| v.map(|k| k.to_string()).unwrap_or_else(|| "beyond".into());
        s.push_str(&format!(", 95% interval [{}, {}]", b(iv.lower), b(iv.upper)));
    }
    s.push_str(&format!(" [{}]", r.model));
    s
}

pub fn render_text(tables: &MeasurementTables, bundle: &ReportBundle) -> String {
    let mut out = String::new();
    for t in summary_tables(tables, bundle) {
        out.push_str(&t.to_text());
        out.push('\n');
    }
    match (&bundle.estimate, &bundle.estimate_error) {
        (Some(est), _) => {
            out.push_str(&format!(
                "Return on investment ({} manual sessions of {} min, {} accrual)\n",
                est.schedule.frequency,
                fmt_min(est.schedule.session_cost),
                match est.config.accrual {
                    crate::estimator::Accrual::Calendar => "calendar",
                    crate::estimator::Accrual::PerStep => "per-step",
                }
            ));
            for r in &bundle.roi {
                let name = table::framework_name(tables.project.as_ref(), &r.framework);
                out.push_str(&roi_line(r, &name));
                out.push('\n');
            }
            for w in &est.warnings {
                out.push_str(&format!("warning: {w}\n"));
            }
        }
        (None, Some(e)) => out.push_str(&format!("No estimate: {e}\n")),
        (None, None) => {}
    }
    out.push_str(&format!(
        "\nledger seq {}, config {}, seed {}\n",
        bundle.provenance.ledger_seq,
        &bundle.provenance.config_hash[..12],
        bundle.provenance.seed
    ));
    out
}

/// Tables as CSV sections, each headed by a `# title` line.
pub fn render_csv(tables: &MeasurementTables, bundle: &ReportBundle) -> String {
    all_tables(tables, bundle).iter().map(|t| format!("# {}\n{}", t.title, t.to_csv())).collect::<Vec<_>>().join("\n")
}

/// Raw measurement records as named CSV documents.
pub fn export_csv(tables: &MeasurementTables) -> Vec<(&'static str, String)> {
    let mut baseline = Table {
        title: "baseline".into(),
        headers: ["category", "protocol", "framework", "seconds"].map(String::from).to_vec(),
        rows: Vec::new(),
    };
    for (p, s) in &tables.baseline_manual {
        baseline.rows.push(vec!["manual_baseline".into(), p.clone(), String::new(), s.to_string()]);
    }
    for (f, per) in &tables.implementation {
        for (p, s) in per {
            baseline.rows.push(vec!["implementation".into(), p.clone(), f.clone(), s.to_string()]);
        }
    }
    let activities = Table {
        title: "activities".into(),
        headers: [
            "activity_id",
            "version",
            "protocol",
            "framework",
            "category",
            "started_at",
            "stopped_at",
            "seconds",
            "overridden",
            "note",
        ]
        .map(String::from)
        .to_vec(),
        rows: tables
            .activities
            .iter()
            .map(|r| {
                vec![
                    r.activity_id.to_string(),
                    r.version_index.to_string(),
                    r.protocol.clone(),
                    r.framework.clone().unwrap_or_default(),
                    r.category.as_str().to_string(),
                    r.started_at.to_rfc3339(),
                    r.stopped_at.to_rfc3339(),
                    r.duration_s.to_string(),
                    r.overridden.to_string(),
                    r.note.clone(),
                ]
            })
            .collect(),
    };
    let runs = Table {
        title: "runs".into(),
        headers: ["version", "protocol", "framework", "outcome", "attempt", "elapsed_ms", "note"]
            .map(String::from)
            .to_vec(),
        rows: tables
            .runs
            .iter()
            .map(|r| {
                vec![
                    r.version_index.to_string(),
                    r.protocol.clone(),
                    r.framework.clone(),
                    match r.outcome {
                        crate::model::Outcome::Pass => "pass".into(),
                        crate::model::Outcome::Fail => "fail".into(),
                    },
                    r.attempt.to_string(),
                    r.elapsed_ms.to_string(),
                    r.note.clone(),
                ]
            })
            .collect(),
    };
    let bugs = Table {
        title: "bugs".into(),
        headers: ["version", "description", "resolution", "activity_id"].map(String::from).to_vec(),
        rows: tables
            .bugs
            .iter()
            .map(|b| {
                vec![
                    b.version_index.to_string(),
                    b.description.clone(),
                    serde_json::to_value(b.resolution)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_string))
                        .unwrap_or_default(),
                    b.activity_id.to_string(),
                ]
            })
            .collect(),
    };
    let mut maint = Table {
        title: "maintenance".into(),
        headers: ["framework", "version", "category", "seconds", "occurrences"].map(String::from).to_vec(),
        rows: Vec::new(),
    };
    for (f, per) in &tables.maintenance {
        for (i, cats) in per {
            for (c, t) in cats {
                maint.rows.push(vec![
                    f.clone(),
                    i.to_string(),
                    c.as_str().to_string(),
                    t.seconds.to_string(),
                    t.occurrences.to_string(),
                ]);
            }
        }
    }
    vec![
        ("baseline.csv", baseline.to_csv()),
        ("maintenance.csv", maint.to_csv()),
        ("activities.csv", activities.to_csv()),
        ("runs.csv", runs.to_csv()),
        ("bugs.csv", bugs.to_csv()),
    ]
}
