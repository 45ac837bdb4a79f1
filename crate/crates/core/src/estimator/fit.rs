use serde::{Deserialize, Serialize};

use super::EstimatorError;

/// ŷ(x) = a + b·g(x) with g the identity (linear) or ln(x + 1) (log).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub a: f64,
    pub b: f64,
    pub rmse: f64,
}

impl LinearFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.a + self.b * x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogModelFit {
    pub a: f64,
    pub b: f64,
    pub rmse: f64,
}

impl LogModelFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.a + self.b * (x + 1.0).ln()
    }
}

/// Ordinary least squares of y on x.
fn ols(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64), EstimatorError> {
    if xs.len() != ys.len() {
        return Err(EstimatorError::Invalid("x and y lengths differ".into()));
    }
    if xs.len() < 2 {
        return Err(EstimatorError::Degenerate("need at least two points".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(EstimatorError::Invalid("non-finite input".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= f64::EPSILON * n * mx.abs().max(1.0) {
        return Err(EstimatorError::Degenerate("all x values are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
    Ok((a, b, (sse / n).sqrt()))
}

pub fn fit_linear(xs: &[f64], ys: &[f64]) -> Result<LinearFit, EstimatorError> {
    let (a, b, rmse) = ols(xs, ys)?;
    Ok(LinearFit { a, b, rmse })
}

pub fn fit_log_model(xs: &[f64], ys: &[f64]) -> Result<LogModelFit, EstimatorError> {
    if xs.iter().any(|x| *x <= -1.0) {
        return Err(EstimatorError::Invalid("log model needs x > -1".into()));
    }
    let gx: Vec<f64> = xs.iter().map(|x| (x + 1.0).ln()).collect();
    let (a, b, rmse) = ols(&gx, ys)?;
    Ok(LogModelFit { a, b, rmse })
}

/// Fits on a curve's (step, value) pairs.
pub fn fit_curve_linear(points: &[f64]) -> Result<LinearFit, EstimatorError> {
    let xs: Vec<f64> = (0..points.len()).map(|k| k as f64).collect();
    fit_linear(&xs, points)
}

pub fn fit_curve_log(points: &[f64]) -> Result<LogModelFit, EstimatorError> {
    let xs: Vec<f64> = (0..points.len()).map(|k| k as f64).collect();
    fit_log_model(&xs, points)
}
