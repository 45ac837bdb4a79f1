use std::str::FromStr;

use chrono::{DateTime, Duration, Months, Utc};
use serde::{Deserialize, Serialize};

use super::EstimatorError;
use crate::history::VersionEntry;
use crate::ledger::{maintenance_series, MaintenanceFilter, MeasurementTables};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurveOrigin {
    Agt { framework: String },
    Mgt { schedule: MgtSchedule, accrual: Accrual },
}

/// Cumulative cost in minutes; `points[k]` is the value at step k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeCurve {
    pub points: Vec<f64>,
    /// Step k maps to the calendar time of version k; step 0 shares version 1's.
    pub calendar_times: Vec<DateTime<Utc>>,
    pub origin: CurveOrigin,
}

impl CumulativeCurve {
    /// Index of the last step.
    pub fn last_step(&self) -> usize {
        self.points.len().saturating_sub(1)
    }

    pub fn last(&self) -> f64 {
        self.points.last().copied().unwrap_or(0.0)
    }

    pub fn is_monotone(&self) -> bool {
        self.points.windows(2).all(|w| w[1] >= w[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frequency {
    Weekly,
    Monthly,
    PerVersion,
}

impl FromStr for Frequency {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "weekly" => Ok(Frequency::Weekly),
            "monthly" => Ok(Frequency::Monthly),
            "per-version" | "per_version" => Ok(Frequency::PerVersion),
            _ => Err(format!("unknown schedule `{s}` (weekly, monthly, per-version)")),
        }
    }
}

impl std::fmt::Display for Frequency {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Frequency::Weekly => "weekly",
            Frequency::Monthly => "monthly",
            Frequency::PerVersion => "per-version",
        })
    }
}

/// How often a manual session of `session_cost` minutes happens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MgtSchedule {
    pub frequency: Frequency,
    /// Minutes per manual session.
    pub session_cost: f64,
}

impl MgtSchedule {
    pub fn new(frequency: Frequency, session_cost_min: f64) -> Result<Self, EstimatorError> {
        if !(session_cost_min.is_finite() && session_cost_min > 0.0) {
            return Err(EstimatorError::Invalid(format!(
                "manual session cost must be > 0 minutes, got {session_cost_min}"
            )));
        }
        Ok(MgtSchedule { frequency, session_cost: session_cost_min })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accrual {
    /// One session per schedule period elapsed on the versions' calendar.
    Calendar,
    /// One session per replay step.
    PerStep,
}

impl FromStr for Accrual {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "calendar" => Ok(Accrual::Calendar),
            "per-step" | "per_step" => Ok(Accrual::PerStep),
            _ => Err(format!("unknown accrual `{s}` (calendar, per-step)")),
        }
    }
}

/// Implementation plus cumulative maintenance for one framework.
pub fn agt_curve(
    tables: &MeasurementTables,
    framework: &str,
    filter: &MaintenanceFilter,
) -> Result<CumulativeCurve, EstimatorError> {
    let project = tables.project.as_ref().ok_or(EstimatorError::NotConfigured)?;
    if project.framework(framework).is_none() {
        return Err(EstimatorError::UnknownFramework(framework.to_string()));
    }
    if tables.versions.is_empty() {
        return Err(EstimatorError::NoVersions);
    }
    let mut missing = Vec::new();
    let mut implementation = 0u64;
    for p in project.selected_protocols() {
        match tables.implementation.get(framework).and_then(|m| m.get(&p.id)) {
            Some(s) => implementation += s,
            None => missing.push(format!("implementation of {}/{framework}", p.id)),
        }
    }
    if !missing.is_empty() {
        return Err(EstimatorError::IncompleteBaseline(missing));
    }
    let mut points = vec![implementation as f64 / 60.0];
    for (_, minutes) in maintenance_series(tables, framework, filter) {
        let prev = *points.last().expect("nonempty");
        points.push(prev + minutes);
    }
    Ok(CumulativeCurve {
        points,
        calendar_times: step_times(&tables.versions, 0),
        origin: CurveOrigin::Agt { framework: framework.to_string() },
    })
}

/// Calendar times for steps 0..=m+extra. Steps past the last version are
/// spaced by the median gap between versions.
pub fn step_times(versions: &[VersionEntry], extra: usize) -> Vec<DateTime<Utc>> {
    let times: Vec<DateTime<Utc>> = versions.iter().map(|v| v.calendar_time).collect();
    let Some(&first) = times.first() else {
        return Vec::new();
    };
    let gap = median_gap(&times);
    let last = *times.last().expect("nonempty");
    let mut out = Vec::with_capacity(times.len() + 1 + extra);
    out.push(first);
    out.extend(times.iter().copied());
    for h in 1..=extra {
        out.push(last + gap * h as i32);
    }
    out
}

fn median_gap(times: &[DateTime<Utc>]) -> Duration {
    let mut gaps: Vec<i64> = times.windows(2).map(|w| (w[1] - w[0]).num_seconds()).collect();
    if gaps.is_empty() {
        return Duration::days(7);
    }
    gaps.sort_unstable();
    let n = gaps.len();
    let mid = if n % 2 == 1 { gaps[n / 2] } else { (gaps[n / 2 - 1] + gaps[n / 2]) / 2 };
    Duration::seconds(mid.max(1))
}

/// Cumulative manual testing cost over the same steps as an AGT curve with
/// `extra` steps of extrapolation.
///
/// Calendar accrual counts the schedule's session starts t1, t1 + p, ... that
/// fall at or before each step's calendar time, so MGT(1) is one session.
/// Monthly periods are calendar months.
pub fn mgt_curve(schedule: MgtSchedule, versions: &[VersionEntry], accrual: Accrual, extra: usize) -> CumulativeCurve {
    let times = step_times(versions, extra);
    let cost = schedule.session_cost;
    let steps = times.len();
    let points = match (accrual, schedule.frequency) {
        (Accrual::PerStep, _) | (Accrual::Calendar, Frequency::PerVersion) => {
            (0..steps).map(|k| cost * k as f64).collect()
        }
        (Accrual::Calendar, freq) => {
            let mut pts = Vec::with_capacity(steps);
            pts.push(0.0);
            if steps > 1 {
                let t1 = times[1];
                let mut sessions = 0u64;
                let mut next = t1;
                for &t in &times[1..] {
                    while next <= t {
                        sessions += 1;
                        next = session_start(t1, freq, sessions);
                    }
                    pts.push(cost * sessions as f64);
                }
            }
            pts
        }
    };
    CumulativeCurve { points, calendar_times: times, origin: CurveOrigin::Mgt { schedule, accrual } }
}

fn session_start(t1: DateTime<Utc>, freq: Frequency, j: u64) -> DateTime<Utc> {
    match freq {
        Frequency::Weekly => t1 + Duration::weeks(j as i64),
        Frequency::Monthly => t1.checked_add_months(Months::new(j as u32)).unwrap_or(DateTime::<Utc>::MAX_UTC),
        Frequency::PerVersion => unreachable!("per-version accrues per step"),
    }
}
