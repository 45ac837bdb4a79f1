use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// Smallest step k with mgt[k] >= agt[k] over the steps both curves cover.
pub fn break_even(agt: &[f64], mgt: &[f64]) -> Option<usize> {
    agt.iter().zip(mgt).position(|(a, m)| m >= a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Observed curve only; no extrapolation.
    Observed,
    Linear,
    Log,
    Bayes,
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "observed" => Ok(ModelKind::Observed),
            "linear" => Ok(ModelKind::Linear),
            "log" => Ok(ModelKind::Log),
            "bayes" => Ok(ModelKind::Bayes),
            _ => Err(format!("unknown model `{s}` (observed, linear, log, bayes)")),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Observed => "observed",
            ModelKind::Linear => "linear",
            ModelKind::Log => "log",
            ModelKind::Bayes => "bayes",
        })
    }
}

/// 95% interval of the break-even step over posterior draws. `None` bounds
/// lie beyond the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInterval {
    pub lower: Option<usize>,
    pub upper: Option<usize>,
    /// Share of draws with no break-even within the horizon.
    pub beyond_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiEstimate {
    pub framework: String,
    pub model: ModelKind,
    /// `None` when MGT stays below AGT up to `horizon_step`.
    pub break_even_step: Option<usize>,
    pub beyond_horizon: bool,
    pub horizon_step: usize,
    /// AGT cumulative cost at the break-even step.
    pub break_even_minutes: Option<f64>,
    pub break_even_hours: Option<f64>,
    #[serde(default)]
    pub break_even_time: Option<DateTime<Utc>>,
    #[serde(default)]
    pub interval: Option<StepInterval>,
}

impl RoiEstimate {
    pub fn from_curves(framework: &str, model: ModelKind, agt: &[f64], mgt: &[f64], times: &[DateTime<Utc>]) -> Self {
        let horizon_step = agt.len().min(mgt.len()).saturating_sub(1);
        let k = break_even(agt, mgt);
        let minutes = k.map(|k| agt[k]);
        RoiEstimate {
            framework: framework.to_string(),
            model,
            break_even_step: k,
            beyond_horizon: k.is_none(),
            horizon_step,
            break_even_minutes: minutes,
            break_even_hours: minutes.map(|m| m / 60.0),
            break_even_time: k.and_then(|k| times.get(k).copied()),
            interval: None,
        }
    }
}

/// Observed values up to step m, then `model` increments past m anchored on
/// the last observation, kept non-decreasing.
pub fn extend(observed: &[f64], horizon: usize, model: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut out = observed.to_vec();
    let Some(&last) = observed.last() else {
        return out;
    };
    let m = observed.len() - 1;
    let base = model(m);
    let mut running = last;
    for k in m + 1..=m + horizon {
        let v = last + (model(k) - base);
        running = running.max(if v.is_finite() { v } else { running });
        out.push(running);
    }
    out
}

/// Break-even step per trajectory, with observed values taking precedence
/// up to step m and trajectories kept non-decreasing past it.
pub fn break_even_distribution(
    observed: &[f64],
    trajectories: &[Vec<f64>],
    mgt: &[f64],
) -> (Vec<Option<usize>>, StepInterval) {
    let m = observed.len().saturating_sub(1);
    let observed_hit = break_even(observed, mgt);
    let steps: Vec<Option<usize>> = trajectories
        .iter()
        .map(|t| {
            if observed_hit.is_some() {
                return observed_hit;
            }
            let mut running = observed.last().copied().unwrap_or(0.0);
            (m + 1..t.len().min(mgt.len())).find(|&k| {
                running = running.max(t[k]);
                mgt[k] >= running
            })
        })
        .collect();
    let n = steps.len();
    // beyond-horizon sorts after every finite step
    let mut keyed: Vec<usize> = steps.iter().map(|s| s.unwrap_or(usize::MAX)).collect();
    keyed.sort_unstable();
    let pick = |p: f64| -> Option<usize> {
        if n == 0 {
            return None;
        }
        let idx = ((p * (n - 1) as f64).round() as usize).min(n - 1);
        Some(keyed[idx]).filter(|&v| v != usize::MAX)
    };
    let beyond = steps.iter().filter(|s| s.is_none()).count();
    let interval = StepInterval {
        lower: pick(0.025),
        upper: pick(0.975),
        beyond_fraction: if n == 0 { 0.0 } else { beyond as f64 / n as f64 },
    };
    (steps, interval)
}
