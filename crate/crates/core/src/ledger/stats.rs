use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::fold::{MaintenanceFilter, MeasurementTables};
use crate::model::ActivityCategory;

/// Mean and sample (n-1) standard deviation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    /// Fewer than two observations: `sd` is reported as 0.
    pub degenerate: bool,
}

impl MeanSd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return MeanSd { degenerate: true, ..Default::default() };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return MeanSd { n, mean, sd: 0.0, degenerate: true };
        }
        let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
        MeanSd { n, mean, sd: (ss / (n - 1) as f64).sqrt(), degenerate: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub category: ActivityCategory,
    pub total_minutes: f64,
    pub occurrences: usize,
    /// Over individual occurrences.
    pub per_occurrence: MeanSd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameworkSummary {
    pub framework: String,
    pub categories: Vec<CategoryStats>,
    pub total_minutes: f64,
    pub total_occurrences: usize,
    /// Versions with any maintenance.
    pub versions_with_maintenance: usize,
    pub steps: usize,
    /// Per-version totals over all steps, zero-maintenance versions included.
    pub per_version: MeanSd,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub frameworks: Vec<FrameworkSummary>,
}

impl SummaryStats {
    pub fn framework(&self, id: &str) -> Option<&FrameworkSummary> {
        self.frameworks.iter().find(|f| f.framework == id)
    }
}

/// Per-version maintenance minutes for versions 1..=m, zeros included.
pub fn maintenance_series(
    tables: &MeasurementTables,
    framework: &str,
    filter: &MaintenanceFilter,
) -> Vec<(usize, f64)> {
    (1..=tables.version_count()).map(|i| (i, tables.maintenance_seconds(framework, i, filter) as f64 / 60.0)).collect()
}

pub fn summary_stats(tables: &MeasurementTables, filter: &MaintenanceFilter) -> SummaryStats {
    let frameworks = tables
        .frameworks()
        .into_iter()
        .map(|fw| {
            let categories = ActivityCategory::MAINTENANCE
                .iter()
                .map(|&cat| {
                    let xs: Vec<f64> = tables
                        .activities
                        .iter()
                        .filter(|r| r.framework.as_deref() == Some(fw.as_str()) && r.category == cat)
                        .filter(|r| filter.admits(r))
                        .map(|r| r.minutes())
                        .collect();
                    CategoryStats {
                        category: cat,
                        total_minutes: xs.iter().sum(),
                        occurrences: xs.len(),
                        per_occurrence: MeanSd::of(&xs),
                    }
                })
                .collect::<Vec<_>>();
            let series = maintenance_series(tables, &fw, filter);
            let per_version: Vec<f64> = series.iter().map(|(_, m)| *m).collect();
            FrameworkSummary {
                total_minutes: categories.iter().map(|c| c.total_minutes).sum(),
                total_occurrences: categories.iter().map(|c| c.occurrences).sum(),
                versions_with_maintenance: per_version.iter().filter(|m| **m > 0.0).count(),
                steps: per_version.len(),
                per_version: MeanSd::of(&per_version),
                framework: fw,
                categories,
            }
        })
        .collect();
    SummaryStats { frameworks }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImplementationRow {
    pub framework: String,
    /// (protocol, minutes) in protocol order
    pub per_protocol: Vec<(String, f64)>,
    pub total_minutes: f64,
    pub per_protocol_stats: MeanSd,
}

/// One-time implementation cost per framework and protocol.
pub fn implementation_stats(tables: &MeasurementTables) -> Vec<ImplementationRow> {
    let protocols = tables.protocols();
    tables
        .frameworks()
        .into_iter()
        .map(|fw| {
            let per: BTreeMap<String, u64> = tables.implementation.get(&fw).cloned().unwrap_or_default();
            let per_protocol: Vec<(String, f64)> =
                protocols.iter().filter_map(|p| per.get(p).map(|s| (p.clone(), *s as f64 / 60.0))).collect();
            let xs: Vec<f64> = per_protocol.iter().map(|(_, m)| *m).collect();
            ImplementationRow {
                total_minutes: xs.iter().sum(),
                per_protocol_stats: MeanSd::of(&xs),
                framework: fw,
                per_protocol,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecTimeRow {
    /// `manual` or a framework id.
    pub source: String,
    pub total_minutes: f64,
    pub average_minutes: f64,
    pub protocols: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecTimeTable {
    pub rows: Vec<ExecTimeRow>,
}

/// Execution time of one pass over the shortlist: manual from the baseline,
/// automated from the mean elapsed time of passing runs per test.
pub fn execution_times(tables: &MeasurementTables) -> ExecTimeTable {
    let protocols = tables.protocols();
    let mut rows = Vec::new();
    let manual: Vec<f64> =
        protocols.iter().filter_map(|p| tables.baseline_manual.get(p).map(|s| *s as f64 / 60.0)).collect();
    rows.push(row("manual", &manual));
    for fw in tables.frameworks() {
        let per: Vec<f64> = protocols
            .iter()
            .filter_map(|p| {
                let ms: Vec<f64> = tables
                    .runs
                    .iter()
                    .filter(|r| r.framework == fw && r.protocol == *p && r.outcome == crate::model::Outcome::Pass)
                    .map(|r| r.elapsed_ms as f64 / 60_000.0)
                    .collect();
                (!ms.is_empty()).then(|| ms.iter().sum::<f64>() / ms.len() as f64)
            })
            .collect();
        rows.push(row(&fw, &per));
    }
    ExecTimeTable { rows }
}

fn row(source: &str, per: &[f64]) -> ExecTimeRow {
    let total: f64 = per.iter().sum();
    ExecTimeRow {
        source: source.to_string(),
        total_minutes: total,
        average_minutes: if per.is_empty() { 0.0 } else { total / per.len() as f64 },
        protocols: per.len(),
    }
}
