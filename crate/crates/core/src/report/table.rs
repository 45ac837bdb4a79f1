use crate::ledger::{ExecTimeTable, ImplementationRow, MeanSd, SummaryStats};
use crate::model::Project;

/// Minutes with at most two decimals, trailing zeros dropped.
pub fn fmt_min(x: f64) -> String {
    let s = format!("{x:.2}");
    let s = if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.').to_string() } else { s };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

pub fn fmt_mean_sd(m: &MeanSd) -> String {
    format!("{} ± {}", fmt_min(m.mean), fmt_min(m.sd))
}

/// A titled grid of preformatted cells.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Table {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_text(&self) -> String {
        let cols = self.headers.len();
        let mut widths: Vec<usize> = self.headers.iter().map(|h| h.chars().count()).collect();
        for r in &self.rows {
            for (i, c) in r.iter().enumerate().take(cols) {
                widths[i] = widths[i].max(c.chars().count());
            }
        }
        let line = |cells: &[String]| -> String {
            let mut out = String::new();
            for (i, c) in cells.iter().enumerate() {
                let pad = widths[i] - c.chars().count();
                if i == 0 {
                    out.push_str(c);
                    out.push_str(&" ".repeat(pad));
                } else {
                    out.push_str("  ");
                    out.push_str(&" ".repeat(pad));
                    out.push_str(c);
                }
            }
            out.trim_end().to_string()
        };
        let mut out = format!("{}\n", self.title);
        out.push_str(&line(&self.headers));
        out.push('\n');
        let total: usize = widths.iter().sum::<usize>() + 2 * cols.saturating_sub(1);
        out.push_str(&"-".repeat(total));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }
}

pub fn framework_name(project: Option<&Project>, id: &str) -> String {
    project.and_then(|p| p.framework(id)).map(|f| f.name.clone()).unwrap_or_else(|| id.to_string())
}

/// Per-protocol implementation minutes, total and mean ± sd per framework.
pub fn implementation_table(rows: &[ImplementationRow], protocols: &[String], project: Option<&Project>) -> Table {
    let mut headers = vec!["Impl. time (min)".to_string()];
    headers.extend(protocols.iter().cloned());
    headers.push("Total".into());
    headers.push("mean ± sd".into());
    let rows = rows
        .iter()
        .map(|r| {
            let mut cells = vec![framework_name(project, &r.framework)];
            for p in protocols {
                let v = r.per_protocol.iter().find(|(id, _)| id == p).map(|(_, m)| fmt_min(*m));
                cells.push(v.unwrap_or_else(|| "-".into()));
            }
            cells.push(fmt_min(r.total_minutes));
            cells.push(fmt_mean_sd(&r.per_protocol_stats));
            cells
        })
        .collect();
    Table { title: "Implementation".into(), headers, rows }
}

/// Category rows with total, occurrences and per-occurrence mean ± sd for
/// each framework. The total row shows versions with maintenance over steps
/// and the per-version mean ± sd.
pub fn maintenance_table(stats: &SummaryStats, project: Option<&Project>) -> Table {
    let mut headers = vec!["Maintenance".to_string()];
    for what in ["total (min)", "occurrences", "mean ± sd (min)"] {
        for f in &stats.frameworks {
            headers.push(format!("{} {what}", framework_name(project, &f.framework)));
        }
    }
    let mut rows = Vec::new();
    for (ci, cat) in crate::model::ActivityCategory::MAINTENANCE.iter().enumerate() {
        let mut cells = vec![cat.label().to_string()];
        cells.extend(stats.frameworks.iter().map(|f| fmt_min(f.categories[ci].total_minutes)));
        cells.extend(stats.frameworks.iter().map(|f| f.categories[ci].occurrences.to_string()));
        cells.extend(stats.frameworks.iter().map(|f| fmt_mean_sd(&f.categories[ci].per_occurrence)));
        rows.push(cells);
    }
    if !stats.frameworks.is_empty() {
        let mut cells = vec!["Total".to_string()];
        cells.extend(stats.frameworks.iter().map(|f| fmt_min(f.total_minutes)));
        cells.extend(stats.frameworks.iter().map(|f| format!("{}/{}", f.versions_with_maintenance, f.steps)));
        cells.extend(stats.frameworks.iter().map(|f| fmt_mean_sd(&f.per_version)));
        rows.push(cells);
    }
    Table { title: "Maintenance".into(), headers, rows }
}

/// Total and average execution minutes for one pass over the shortlist.
pub fn execution_table(exec: &ExecTimeTable, project: Option<&Project>) -> Table {
    let mut headers = vec!["Exec. time (min)".to_string()];
    for r in &exec.rows {
        headers.push(if r.source == "manual" { "Manual".into() } else { framework_name(project, &r.source) });
    }
    let total = std::iter::once("Total".to_string()).chain(exec.rows.iter().map(|r| fmt_min(r.total_minutes)));
    let avg = std::iter::once("Average".to_string()).chain(exec.rows.iter().map(|r| fmt_min(r.average_minutes)));
    Table { title: "Execution time".into(), headers, rows: vec![total.collect(), avg.collect()] }
}
