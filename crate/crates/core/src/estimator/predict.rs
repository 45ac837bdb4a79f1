use std::str::FromStr;

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use super::bayes::{fit_counts, McmcConfig, PosteriorSamples, Predictor, Priors};
use super::{quantile, CumulativeCurve, EstimatorError};

/// What the count likelihood is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    /// Rounded cumulative minutes at every step, treated as independent.
    Cumulative,
    /// Rounded per-step minutes; predictions are integrated.
    Increments,
}

impl FromStr for CountMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cumulative" => Ok(CountMode::Cumulative),
            "increments" => Ok(CountMode::Increments),
            _ => Err(format!("unknown count mode `{s}` (cumulative, increments)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesFit {
    pub samples: PosteriorSamples,
    pub predictor: Predictor,
    pub mode: CountMode,
    /// The fitted curve, steps 0..=m.
    pub observed: Vec<f64>,
}

pub fn fit_bayes(
    curve: &CumulativeCurve,
    predictor: Predictor,
    mode: CountMode,
    priors: &Priors,
    mcmc: &McmcConfig,
) -> Result<BayesFit, EstimatorError> {
    let pts = &curve.points;
    let (xs, ys): (Vec<f64>, Vec<u64>) = match mode {
        CountMode::Cumulative => (0..pts.len()).map(|k| (predictor.x(k), pts[k].round().max(0.0) as u64)).unzip(),
        CountMode::Increments => {
            (1..pts.len()).map(|k| (predictor.x(k), (pts[k] - pts[k - 1]).round().max(0.0) as u64)).unzip()
        }
    };
    let samples = fit_counts(&xs, &ys, priors, mcmc)?;
    Ok(BayesFit { samples, predictor, mode, observed: pts.clone() })
}

/// Means above this are clamped when sampling, and the bands flagged.
pub const LAMBDA_CAP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub step: usize,
    #[serde(default)]
    pub calendar_time: Option<DateTime<Utc>>,
    pub lower: f64,
    /// Running maximum of the raw median.
    pub median: f64,
    pub upper: f64,
    pub raw_median: f64,
    #[serde(default)]
    pub observed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveBands {
    pub last_observed_step: usize,
    pub horizon: usize,
    pub points: Vec<BandPoint>,
    pub saturated: bool,
}

impl PredictiveBands {
    pub fn width(&self, step: usize) -> Option<f64> {
        self.points.get(step).map(|p| p.upper - p.lower)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictive {
    pub bands: PredictiveBands,
    /// One cumulative trajectory over steps 0..=m+H per posterior draw.
    pub trajectories: Vec<Vec<f64>>,
}

/// One negative-binomial draw with mean `mu` and dispersion `phi`.
pub fn sample_nb<R: rand::Rng>(mu: f64, phi: f64, rng: &mut R) -> f64 {
    if mu.is_nan() || mu <= 0.0 {
        return 0.0;
    }
    let lambda = if phi > 1e12 {
        mu
    } else {
        match Gamma::new(phi, mu / phi) {
            Ok(g) => g.sample(rng),
            Err(_) => mu,
        }
    };
    if lambda.is_nan() || lambda <= 0.0 {
        return 0.0;
    }
    Poisson::new(lambda.min(LAMBDA_CAP)).map(|p| p.sample(rng)).unwrap_or(LAMBDA_CAP)
}

/// Posterior predictive cumulative cost over steps 0..=m+horizon.
/// `times` optionally labels the steps with calendar instants.
pub fn posterior_predictive(fit: &BayesFit, horizon: usize, seed: u64, times: Option<&[DateTime<Utc>]>) -> Predictive {
    let m = fit.observed.len().saturating_sub(1);
    let steps = m + horizon + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut saturated = false;
    let mut mean_at = |d: &super::bayes::Draw, k: usize| -> f64 {
        let eta = d.alpha + d.beta * fit.predictor.x(k);
        let mu = eta.exp();
        if mu.is_nan() || mu >= LAMBDA_CAP {
            saturated = true;
            LAMBDA_CAP
        } else {
            mu
        }
    };
    let mut trajectories = Vec::with_capacity(fit.samples.draws.len());
    for d in &fit.samples.draws {
        let mut traj = Vec::with_capacity(steps);
        match fit.mode {
            CountMode::Cumulative => {
                for k in 0..steps {
                    let mu = mean_at(d, k);
                    traj.push(sample_nb(mu, d.phi, &mut rng));
                }
            }
            CountMode::Increments => {
                let mut acc = fit.observed.first().copied().unwrap_or(0.0);
                traj.push(acc);
                for k in 1..steps {
                    let mu = mean_at(d, k);
                    acc += sample_nb(mu, d.phi, &mut rng);
                    traj.push(acc);
                }
            }
        }
        trajectories.push(traj);
    }

    let mut points = Vec::with_capacity(steps);
    let mut running = f64::NEG_INFINITY;
    let mut column = Vec::with_capacity(trajectories.len());
    for k in 0..steps {
        column.clear();
        column.extend(trajectories.iter().map(|t| t[k]));
        column.sort_by(f64::total_cmp);
        let raw_median = quantile(&column, 0.5);
        running = running.max(raw_median);
        let median = running;
        points.push(BandPoint {
            step: k,
            calendar_time: times.and_then(|t| t.get(k).copied()),
            lower: quantile(&column, 0.025).min(median),
            median,
            upper: quantile(&column, 0.975).max(median),
            raw_median,
            observed: fit.observed.get(k).copied(),
        });
    }
    Predictive { bands: PredictiveBands { last_observed_step: m, horizon, points, saturated }, trajectories }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::curve::CurveOrigin;

    fn curve(points: Vec<f64>) -> CumulativeCurve {
        CumulativeCurve { points, calendar_times: Vec::new(), origin: CurveOrigin::Agt { framework: "ea".into() } }
    }

    fn mcmc() -> McmcConfig {
        McmcConfig { chains: 4, warmup: 500, draws: 500, seed: 3 }
    }

    #[test]
    fn nb_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(mu, phi) in &[(20.0, 4.0), (300.0, 10.0), (5.0, 0.8)] {
            let n = 200_000;
            let xs: Vec<f64> = (0..n).map(|_| sample_nb(mu, phi, &mut rng)).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let want = mu + mu * mu / phi;
            assert!((mean - mu).abs() / mu < 0.01, "mean {mean} vs {mu}");
            assert!((var - want).abs() / want < 0.03, "var {var} vs {want}");
        }
    }

    #[test]
    fn bands_are_ordered_and_median_monotone() {
        let pts: Vec<f64> = (0..=30).map(|k| 1200.0 + 60.0 * (k as f64 + 1.0).ln()).collect();
        for mode in [CountMode::Cumulative, CountMode::Increments] {
            let fit = fit_bayes(&curve(pts.clone()), Predictor::Step, mode, &Priors::default(), &mcmc()).unwrap();
            let p = posterior_predictive(&fit, 12, 1, None);
            assert_eq!(p.bands.points.len(), 31 + 12);
            for b in &p.bands.points {
                assert!(b.lower <= b.median && b.median <= b.upper);
            }
            assert!(p.bands.points.windows(2).all(|w| w[1].median >= w[0].median));
            assert_eq!(p.trajectories.len(), 2000);
        }
    }

    #[test]
    fn zero_horizon_covers_last_observation() {
        let pts: Vec<f64> = (0..=40).map(|k| 900.0 + 15.0 * k as f64).collect();
        let fit = fit_bayes(&curve(pts.clone()), Predictor::Step, CountMode::Cumulative, &Priors::default(), &mcmc())
            .unwrap();
        let p = posterior_predictive(&fit, 0, 2, None);
        let last = p.bands.points.last().unwrap();
        assert_eq!(last.step, 40);
        assert!(last.lower <= pts[40] && pts[40] <= last.upper);
    }

    #[test]
    fn saturation_is_flagged() {
        let fit = BayesFit {
            samples: PosteriorSamples {
                draws: vec![super::super::bayes::Draw { alpha: 10.0, beta: 5.0, phi: 5.0 }],
                chains: 1,
                per_chain: 1,
                diagnostics: super::super::bayes::Diagnostics {
                    alpha: super::super::bayes::ParamDiagnostics { rhat: 1.0, ess: 1.0 },
                    beta: super::super::bayes::ParamDiagnostics { rhat: 1.0, ess: 1.0 },
                    phi: super::super::bayes::ParamDiagnostics { rhat: 1.0, ess: 1.0 },
                    acceptance: vec![],
                    converged: true,
                },
                failed_diagnostics: false,
                seed: 0,
            },
            predictor: Predictor::Step,
            mode: CountMode::Cumulative,
            observed: vec![1.0, 2.0],
        };
        let p = posterior_predictive(&fit, 10, 0, None);
        assert!(p.bands.saturated);
        assert!(p.trajectories[0].iter().all(|v| v.is_finite()));
    }

    #[test]
    fn deterministic_given_seed() {
        let pts: Vec<f64> = (0..=20).map(|k| 500.0 + 10.0 * k as f64).collect();
        let fit =
            fit_bayes(&curve(pts), Predictor::LogStep, CountMode::Cumulative, &Priors::default(), &mcmc()).unwrap();
        let a = posterior_predictive(&fit, 5, 9, None);
        let b = posterior_predictive(&fit, 5, 9, None);
        assert_eq!(a.bands, b.bands);
        assert_eq!(a.trajectories, b.trajectories);
    }
}
