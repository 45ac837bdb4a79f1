use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::table::{fmt_min, Table};
use crate::estimator::{EstimateReport, PredictiveBands};
use crate::ledger::{maintenance_series, MaintenanceFilter, MeasurementTables};

pub const DEFAULT_BIN_WIDTH: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    /// Inclusive.
    pub lower: f64,
    /// Exclusive.
    pub upper: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub framework: String,
    pub bin_width: f64,
    pub bins: Vec<Bin>,
}

/// Fixed-width bins from 0 up to the largest value. Bin k holds values in
/// [k*w, (k+1)*w).
pub fn histogram(values: &[f64], bin_width: f64) -> Vec<Bin> {
    assert!(bin_width > 0.0 && bin_width.is_finite(), "bin width must be positive");
    let bin_of = |x: f64| -> usize {
        let x = x.max(0.0);
        let mut k = (x / bin_width).floor() as usize;
        while (k + 1) as f64 * bin_width <= x {
            k += 1;
        }
        while k > 0 && k as f64 * bin_width > x {
            k -= 1;
        }
        k
    };
    let Some(last) = values.iter().map(|&x| bin_of(x)).max() else {
        return Vec::new();
    };
    let mut counts = vec![0usize; last + 1];
    for &x in values {
        counts[bin_of(x)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| Bin { lower: k as f64 * bin_width, upper: (k + 1) as f64 * bin_width, count })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub index: usize,
    #[serde(default)]
    pub calendar_time: Option<DateTime<Utc>>,
    pub minutes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaintenanceSeries {
    pub framework: String,
    pub points: Vec<SeriesPoint>,
}

pub fn maintenance_series_all(tables: &MeasurementTables, filter: &MaintenanceFilter) -> Vec<MaintenanceSeries> {
    tables
        .frameworks()
        .into_iter()
        .map(|fw| {
            let points = maintenance_series(tables, &fw, filter)
                .into_iter()
                .map(|(i, minutes)| SeriesPoint {
                    index: i,
                    calendar_time: tables.versions.get(i - 1).map(|v| v.calendar_time),
                    minutes,
                })
                .collect();
            MaintenanceSeries { framework: fw, points }
        })
        .collect()
}

pub fn histograms(series: &[MaintenanceSeries], bin_width: f64) -> Vec<Histogram> {
    series
        .iter()
        .map(|s| {
            let xs: Vec<f64> = s.points.iter().map(|p| p.minutes).collect();
            Histogram { framework: s.framework.clone(), bin_width, bins: histogram(&xs, bin_width) }
        })
        .collect()
}

fn time_cell(t: Option<&DateTime<Utc>>) -> String {
    t.map(|t| t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)).unwrap_or_default()
}

pub fn maintenance_series_table(series: &[MaintenanceSeries]) -> Table {
    let mut headers = vec!["version".to_string(), "calendar_time".to_string()];
    headers.extend(series.iter().map(|s| s.framework.clone()));
    let n = series.iter().map(|s| s.points.len()).max().unwrap_or(0);
    let rows = (0..n)
        .map(|k| {
            let first = series.iter().find_map(|s| s.points.get(k));
            let mut cells = vec![
                first.map(|p| p.index.to_string()).unwrap_or_default(),
                time_cell(first.and_then(|p| p.calendar_time.as_ref())),
            ];
            cells.extend(series.iter().map(|s| s.points.get(k).map(|p| fmt_min(p.minutes)).unwrap_or_default()));
            cells
        })
        .collect();
    Table { title: "Maintenance per version".into(), headers, rows }
}

pub fn histogram_table(hists: &[Histogram]) -> Table {
    let rows = hists
        .iter()
        .flat_map(|h| {
            h.bins
                .iter()
                .map(move |b| vec![h.framework.clone(), fmt_min(b.lower), fmt_min(b.upper), b.count.to_string()])
        })
        .collect();
    Table {
        title: "Maintenance histogram".into(),
        headers: vec!["framework".into(), "lower".into(), "upper".into(), "count".into()],
        rows,
    }
}

/// MGT then per framework observed AGT and projection, on step and calendar axes.
pub fn curves_table(est: &EstimateReport) -> Table {
    let mut headers = vec!["step".to_string(), "calendar_time".to_string(), "mgt".to_string()];
    for f in &est.frameworks {
        headers.push(format!("{}_agt", f.framework));
        headers.push(format!("{}_projection", f.framework));
    }
    let rows = (0..est.mgt.points.len())
        .map(|k| {
            let mut cells = vec![k.to_string(), time_cell(est.mgt.calendar_times.get(k)), fmt_min(est.mgt.points[k])];
            for f in &est.frameworks {
                cells.push(f.agt.points.get(k).map(|v| fmt_min(*v)).unwrap_or_default());
                cells.push(f.projection.get(k).map(|v| fmt_min(*v)).unwrap_or_default());
            }
            cells
        })
        .collect();
    Table { title: "Cumulative cost".into(), headers, rows }
}

pub fn bands_table(framework: &str, bands: &PredictiveBands) -> Table {
    let rows = bands
        .points
        .iter()
        .map(|p| {
            vec![
                framework.to_string(),
                p.step.to_string(),
                time_cell(p.calendar_time.as_ref()),
                fmt_min(p.lower),
                fmt_min(p.median),
                fmt_min(p.upper),
                p.observed.map(fmt_min).unwrap_or_default(),
            ]
        })
        .collect();
    Table {
        title: format!("Predictive bands {framework}"),
        headers: ["framework", "step", "calendar_time", "lower", "median", "upper", "observed"]
            .map(String::from)
            .to_vec(),
        rows,
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn brute(values: &[f64], w: f64) -> Vec<usize> {
        let n = values.iter().map(|&x| (x / w) as usize + 2).max().unwrap_or(0);
        (0..n)
            .map(|k| {
                let (lo, hi) = (k as f64 * w, (k + 1) as f64 * w);
                values.iter().filter(|&&x| lo <= x && x < hi).count()
            })
            .collect()
    }

    #[test]
    fn all_zero_is_one_bin() {
        let h = histogram(&[0.0; 65], 5.0);
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].count, 65);
        assert_eq!((h[0].lower, h[0].upper), (0.0, 5.0));
        assert!(histogram(&[], 5.0).is_empty());
    }

    #[test]
    fn boundaries_go_up() {
        let h = histogram(&[4.99, 5.0, 10.0], 5.0);
        assert_eq!(h.iter().map(|b| b.count).collect::<Vec<_>>(), vec![1, 1, 1]);
    }

    proptest! {
        #[test]
        fn matches_brute_force(xs in prop::collection::vec(0.0..400.0f64, 0..80), w in 0.1..30.0f64) {
            let h = histogram(&xs, w);
            let b = brute(&xs, w);
            for (k, bin) in h.iter().enumerate() {
                prop_assert_eq!(bin.count, b[k]);
            }
            prop_assert!(b[h.len()..].iter().all(|c| *c == 0));
            prop_assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), xs.len());
        }
    }
}
