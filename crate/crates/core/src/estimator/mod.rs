//! Cumulative cost curves, model fits and break-even estimation.

mod bayes;
mod curve;
pub mod diag;
mod fit;
mod predict;
mod roi;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{MaintenanceFilter, MeasurementTables};

pub use bayes::{
    fit_counts, nb_log_pmf, Diagnostics, Draw, Interval, McmcConfig, ParamDiagnostics, PhiPrior, PosteriorSamples,
    Predictor, Priors, ESS_MIN, RHAT_MAX,
};
pub use curve::{agt_curve, mgt_curve, step_times, Accrual, CumulativeCurve, CurveOrigin, Frequency, MgtSchedule};
pub use fit::{fit_curve_linear, fit_curve_log, fit_linear, fit_log_model, LinearFit, LogModelFit};
pub use predict::{
    fit_bayes, posterior_predictive, sample_nb, BandPoint, BayesFit, CountMode, Predictive, PredictiveBands, LAMBDA_CAP,
};
pub use roi::{break_even, break_even_distribution, extend, ModelKind, RoiEstimate, StepInterval};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("no project has been configured")]
    NotConfigured,
    #[error("unknown framework `{0}`")]
    UnknownFramework(String),
    #[error("the replay has not started, so there are no versions to estimate over")]
    NoVersions,
    #[error("baseline incomplete, missing: {}", .0.join(", "))]
    IncompleteBaseline(Vec<String>),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("sampler did not converge for {framework}: {detail}")]
    NotConverged { framework: String, detail: String },
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateConfig {
    /// Frameworks to estimate; empty means all.
    #[serde(default)]
    pub frameworks: Vec<String>,
    pub frequency: Frequency,
    /// Minutes per manual session; defaults to the recorded manual baseline total.
    #[serde(default)]
    pub session_cost: Option<f64>,
    pub accrual: Accrual,
    pub model: ModelKind,
    pub predictor: Predictor,
    pub mode: CountMode,
    /// Steps predicted past the last replayed version.
    pub horizon: usize,
    pub filter: MaintenanceFilter,
    pub priors: Priors,
    pub mcmc: McmcConfig,
    /// Report Bayesian results even when diagnostics fail.
    pub allow_unconverged: bool,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            frameworks: Vec::new(),
            frequency: Frequency::Weekly,
            session_cost: None,
            accrual: Accrual::Calendar,
            model: ModelKind::Log,
            predictor: Predictor::Step,
            mode: CountMode::Cumulative,
            horizon: 52,
            filter: MaintenanceFilter::default(),
            priors: Priors::default(),
            mcmc: McmcConfig::default(),
            allow_unconverged: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesSummary {
    pub alpha: Interval,
    pub beta: Interval,
    pub phi: Interval,
    pub diagnostics: Diagnostics,
    pub failed_diagnostics: bool,
    pub draws: usize,
    pub seed: u64,
}

impl BayesSummary {
    fn of(s: &PosteriorSamples) -> Self {
        BayesSummary {
            alpha: s.alpha_interval(0.95),
            beta: s.beta_interval(0.95),
            phi: s.phi_interval(0.95),
            diagnostics: s.diagnostics.clone(),
            failed_diagnostics: s.failed_diagnostics,
            draws: s.draws.len(),
            seed: s.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameworkEstimate {
    pub framework: String,
    pub agt: CumulativeCurve,
    /// Observed AGT then the selected model's extrapolation, steps 0..=m+H.
    pub projection: Vec<f64>,
    #[serde(default)]
    pub linear: Option<LinearFit>,
    #[serde(default)]
    pub log: Option<LogModelFit>,
    #[serde(default)]
    pub bayes: Option<BayesSummary>,
    #[serde(default)]
    pub bands: Option<PredictiveBands>,
    pub roi: RoiEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub config: EstimateConfig,
    pub schedule: MgtSchedule,
    pub mgt: CumulativeCurve,
    pub frameworks: Vec<FrameworkEstimate>,
    pub warnings: Vec<String>,
}

impl EstimateReport {
    pub fn framework(&self, id: &str) -> Option<&FrameworkEstimate> {
        self.frameworks.iter().find(|f| f.framework == id)
    }
}

/// Curves, fits and break-even for every requested framework. Pure given
/// the tables and the config (which carries the seed).
pub fn estimate(tables: &MeasurementTables, cfg: &EstimateConfig) -> Result<EstimateReport, EstimatorError> {
    let project = tables.project.as_ref().ok_or(EstimatorError::NotConfigured)?;
    let missing_manual: Vec<String> = project
        .selected_protocols()
        .filter(|p| !tables.baseline_manual.contains_key(&p.id))
        .map(|p| format!("manual baseline for {}", p.id))
        .collect();
    let session_cost = match cfg.session_cost {
        Some(c) => c,
        None if !missing_manual.is_empty() => return Err(EstimatorError::IncompleteBaseline(missing_manual)),
        None => tables.manual_session_seconds() as f64 / 60.0,
    };
    let schedule = MgtSchedule::new(cfg.frequency, session_cost)?;
    let frameworks: Vec<String> = if cfg.frameworks.is_empty() {
        project.frameworks.iter().map(|f| f.id.clone()).collect()
    } else {
        cfg.frameworks.clone()
    };
    if tables.versions.is_empty() {
        return Err(EstimatorError::NoVersions);
    }
    let horizon = if cfg.model == ModelKind::Observed { 0 } else { cfg.horizon };
    let mgt = mgt_curve(schedule, &tables.versions, cfg.accrual, horizon);
    let mut warnings = Vec::new();
    if !tables.open_activities.is_empty() {
        warnings
            .push(format!("{} activity timer(s) still running; excluded from totals", tables.open_activities.len()));
    }
    let mut out = Vec::new();
    for fw in frameworks {
        let agt = agt_curve(tables, &fw, &cfg.filter)?;
        let linear = fit_curve_linear(&agt.points).ok();
        let log = fit_curve_log(&agt.points).ok();
        let mut bayes = None;
        let mut bands = None;
        let mut interval = None;
        let projection = match cfg.model {
            ModelKind::Observed => agt.points.clone(),
            ModelKind::Linear => match linear {
                Some(f) => extend(&agt.points, horizon, |k| f.predict(k as f64)),
                None => extend(&agt.points, horizon, |_| 0.0),
            },
            ModelKind::Log => match log {
                Some(f) => extend(&agt.points, horizon, |k| f.predict(k as f64)),
                None => extend(&agt.points, horizon, |_| 0.0),
            },
            ModelKind::Bayes => {
                let fit = fit_bayes(&agt, cfg.predictor, cfg.mode, &cfg.priors, &cfg.mcmc)?;
                if fit.samples.failed_diagnostics {
                    let d = &fit.samples.diagnostics;
                    let detail = format!(
                        "split-Rhat alpha {:.3}, beta {:.3}, phi {:.3}; ESS {:.0}, {:.0}, {:.0}",
                        d.alpha.rhat, d.beta.rhat, d.phi.rhat, d.alpha.ess, d.beta.ess, d.phi.ess
                    );
                    if !cfg.allow_unconverged {
                        return Err(EstimatorError::NotConverged { framework: fw, detail });
                    }
                    warnings.push(format!("{fw}: sampler diagnostics failed ({detail})"));
                }
                let pred = posterior_predictive(&fit, horizon, cfg.mcmc.seed, Some(&mgt.calendar_times));
                if pred.bands.saturated {
                    warnings.push(format!("{fw}: predicted means hit the cap of {LAMBDA_CAP:e} minutes"));
                }
                let (_, iv) = break_even_distribution(&agt.points, &pred.trajectories, &mgt.points);
                interval = Some(iv);
                let medians: Vec<f64> = pred.bands.points.iter().map(|p| p.median).collect();
                let m = agt.last_step();
                bayes = Some(BayesSummary::of(&fit.samples));
                let proj = extend(&agt.points, horizon, |k| medians[k] - medians[m]);
                bands = Some(pred.bands);
                proj
            }
        };
        let mut roi = RoiEstimate::from_curves(&fw, cfg.model, &projection, &mgt.points, &mgt.calendar_times);
        roi.interval = interval;
        out.push(FrameworkEstimate { framework: fw, agt, projection, linear, log, bayes, bands, roi });
    }
    Ok(EstimateReport { config: cfg.clone(), schedule, mgt, frameworks: out, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&v, 0.1), 1.4);
        assert!(quantile(&[], 0.5).is_nan());
    }
}
