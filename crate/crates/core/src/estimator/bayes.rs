//! Negative-binomial (Gamma-Poisson) regression with a log link, sampled by
//! adaptive random-walk Metropolis.
//!
//! ```text
//! y_i ~ NB(mean λ_i, dispersion φ)     Var = λ + λ²/φ
//! log λ_i = α + β·x_i
//! α, β ~ Normal(0, 10)
//! log φ ~ Gamma(shape 0.5, rate 0.5)   (or φ ~ Exponential(1))
//! ```
//!
//! The sampler works on (a, b, s) with a standardized predictor
//! z = (x - x̄)/sd(x): log λ = a + b·z, so β = b/sd(x) and α = a - β·x̄.
//! s is log(log φ) under the log-φ Gamma prior and log φ otherwise.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::diag::{ess, split_rhat};
use super::{quantile, EstimatorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    /// x = step index
    Step,
    /// x = ln(step + 1)
    LogStep,
}

impl Predictor {
    pub fn x(self, step: usize) -> f64 {
        match self {
            Predictor::Step => step as f64,
            Predictor::LogStep => (step as f64 + 1.0).ln(),
        }
    }
}

impl FromStr for Predictor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "step" => Ok(Predictor::Step),
            "log-step" | "log_step" => Ok(Predictor::LogStep),
            _ => Err(format!("unknown predictor `{s}` (step, log-step)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhiPrior {
    /// Gamma(shape, rate) on log φ; implies φ > 1.
    LogGamma { shape: f64, rate: f64 },
    /// Exponential(rate) on φ.
    Exponential { rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    /// Normal(0, sd) standard deviations.
    pub alpha_sd: f64,
    pub beta_sd: f64,
    pub phi: PhiPrior,
}

impl Default for Priors {
    fn default() -> Self {
        Priors { alpha_sd: 10.0, beta_sd: 10.0, phi: PhiPrior::LogGamma { shape: 0.5, rate: 0.5 } }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        let ok = self.alpha_sd > 0.0
            && self.beta_sd > 0.0
            && match self.phi {
                PhiPrior::LogGamma { shape, rate } => shape > 0.0 && rate > 0.0,
                PhiPrior::Exponential { rate } => rate > 0.0,
            };
        if ok {
            Ok(())
        } else {
            Err(EstimatorError::Invalid("prior scales must be positive".into()))
        }
    }

    /// log φ from the sampler's s coordinate, or None outside the support.
    fn log_phi(&self, s: f64) -> Option<f64> {
        let lp = match self.phi {
            PhiPrior::LogGamma { .. } => s.exp(),
            PhiPrior::Exponential { .. } => s,
        };
        (lp.is_finite() && lp < 700.0).then_some(lp)
    }

    fn s_of(&self, phi: f64) -> f64 {
        match self.phi {
            PhiPrior::LogGamma { .. } => phi.ln().ln(),
            PhiPrior::Exponential { .. } => phi.ln(),
        }
    }

    /// Log prior density of s, including the change of variables.
    fn log_prior_s(&self, log_phi: f64) -> f64 {
        match self.phi {
            PhiPrior::LogGamma { shape, rate } => {
                // density of u = log φ is Gamma; u = e^s so du/ds = e^s = u
                (shape - 1.0) * log_phi.ln() - rate * log_phi + log_phi.ln()
            }
            // φ = e^s so dφ/ds = φ
            PhiPrior::Exponential { rate } => -rate * log_phi.exp() + log_phi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig { chains: 4, warmup: 1000, draws: 1000, seed: 20190422 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub alpha: f64,
    pub beta: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub rhat: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub alpha: ParamDiagnostics,
    pub beta: ParamDiagnostics,
    /// Computed on log φ.
    pub phi: ParamDiagnostics,
    /// Acceptance rate of the kept draws, per chain.
    pub acceptance: Vec<f64>,
    pub converged: bool,
}

pub const RHAT_MAX: f64 = 1.05;
pub const ESS_MIN: f64 = 200.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    /// Chain-major: draws of chain c are `draws[c * per_chain..(c + 1) * per_chain]`.
    pub draws: Vec<Draw>,
    pub chains: usize,
    pub per_chain: usize,
    pub diagnostics: Diagnostics,
    pub failed_diagnostics: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub median: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

impl PosteriorSamples {
    fn interval(&self, f: impl Fn(&Draw) -> f64, level: f64) -> Interval {
        let mut v: Vec<f64> = self.draws.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        let tail = (1.0 - level) / 2.0;
        Interval { lower: quantile(&v, tail), median: quantile(&v, 0.5), upper: quantile(&v, 1.0 - tail) }
    }

    pub fn alpha_interval(&self, level: f64) -> Interval {
        self.interval(|d| d.alpha, level)
    }

    pub fn beta_interval(&self, level: f64) -> Interval {
        self.interval(|d| d.beta, level)
    }

    pub fn phi_interval(&self, level: f64) -> Interval {
        self.interval(|d| d.phi, level)
    }
}

/// log Γ(y + φ) - log Γ(φ), stable for large φ.
fn ln_rising(y: f64, phi: f64) -> f64 {
    if y == 0.0 {
        return 0.0;
    }
    if phi < 1e6 {
        ln_gamma(y + phi) - ln_gamma(phi)
    } else {
        // Stirling difference; the neglected terms are O(1/φ³)
        (phi - 0.5) * (y / phi).ln_1p() + y * (phi + y).ln() - y + (1.0 / (phi + y) - 1.0 / phi) / 12.0
    }
}

/// NB log pmf without the -ln(y!) term.
fn nb_ll_kernel(y: f64, log_mu: f64, phi: f64, log_phi: f64) -> f64 {
    let mu = log_mu.exp();
    // φ·ln(φ/(φ+μ)) and y·ln(μ/(φ+μ)) without cancelling large logs
    let (phi_term, y_term) = if log_phi > log_mu {
        let l = (mu / phi).ln_1p();
        (-phi * l, y * (log_mu - log_phi - l))
    } else {
        let l = (phi / mu).ln_1p();
        (phi * (log_phi - log_mu - l), -y * l)
    };
    ln_rising(y, phi) + phi_term + y_term
}

/// Full NB log pmf.
pub fn nb_log_pmf(y: u64, mu: f64, phi: f64) -> f64 {
    let y = y as f64;
    nb_ll_kernel(y, mu.ln(), phi, phi.ln()) - ln_gamma(y + 1.0)
}

struct Model<'a> {
    z: Vec<f64>,
    y: &'a [f64],
    x_mean: f64,
    x_sd: f64,
    priors: Priors,
}

impl Model<'_> {
    fn to_draw(&self, t: &[f64; 3]) -> Draw {
        let beta = t[1] / self.x_sd;
        let log_phi = self.priors.log_phi(t[2]).unwrap_or(f64::INFINITY);
        Draw { alpha: t[0] - beta * self.x_mean, beta, phi: log_phi.exp() }
    }

    fn log_post(&self, t: &[f64; 3]) -> f64 {
        let Some(log_phi) = self.priors.log_phi(t[2]) else {
            return f64::NEG_INFINITY;
        };
        let phi = log_phi.exp();
        let mut ll = 0.0;
        for (z, y) in self.z.iter().zip(self.y) {
            let eta = t[0] + t[1] * z;
            if eta.abs() > 600.0 {
                return f64::NEG_INFINITY;
            }
            ll += nb_ll_kernel(*y, eta, phi, log_phi);
        }
        let beta = t[1] / self.x_sd;
        let alpha = t[0] - beta * self.x_mean;
        let lp = -0.5 * (alpha / self.priors.alpha_sd).powi(2) - 0.5 * (beta / self.priors.beta_sd).powi(2)
            + self.priors.log_prior_s(log_phi);
        let v = ll + lp;
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }
}

type Mat3 = [[f64; 3]; 3];

fn cholesky(m: &Mat3) -> Option<Mat3> {
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = m[i][i] - s;
                if !(d > 0.0 && d.is_finite()) {
                    return None;
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (m[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

fn invert(m: &Mat3) -> Option<Mat3> {
    let c = |i: usize, j: usize| {
        let (r0, r1) = ((i + 1) % 3, (i + 2) % 3);
        let (c0, c1) = ((j + 1) % 3, (j + 2) % 3);
        m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]
    };
    let det = m[0][0] * c(0, 0) + m[0][1] * c(0, 1) + m[0][2] * c(0, 2);
    if det.abs() < 1e-300 || !det.is_finite() {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = c(j, i) / det;
        }
    }
    Some(inv)
}

/// Mode of the log posterior by damped Newton steps with finite differences,
/// and the inverse negative Hessian there when it is positive definite.
fn laplace(model: &Model<'_>, start: [f64; 3]) -> ([f64; 3], Option<Mat3>) {
    let h = [1e-4, 1e-4, 1e-4];
    let grad_hess = |t: &[f64; 3]| -> ([f64; 3], Mat3) {
        let f0 = model.log_post(t);
        let mut g = [0.0; 3];
        let mut hm = [[0.0; 3]; 3];
        let at = |d: &[(usize, f64)]| {
            let mut u = *t;
            for &(i, s) in d {
                u[i] += s;
            }
            model.log_post(&u)
        };
        for i in 0..3 {
            let fp = at(&[(i, h[i])]);
            let fm = at(&[(i, -h[i])]);
            g[i] = (fp - fm) / (2.0 * h[i]);
            hm[i][i] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
            for j in 0..i {
                let v = (at(&[(i, h[i]), (j, h[j])]) - at(&[(i, h[i]), (j, -h[j])]) - at(&[(i, -h[i]), (j, h[j])])
                    + at(&[(i, -h[i]), (j, -h[j])]))
                    / (4.0 * h[i] * h[j]);
                hm[i][j] = v;
                hm[j][i] = v;
            }
        }
        (g, hm)
    };
    let mut t = start;
    let mut f = model.log_post(&t);
    for _ in 0..50 {
        if !f.is_finite() {
            break;
        }
        let (g, hm) = grad_hess(&t);
        let neg: Mat3 = hm.map(|r| r.map(|v| -v));
        // Newton direction when the Hessian is negative definite, else gradient ascent
        let dir = match invert(&neg).filter(|_| cholesky(&neg).is_some()) {
            Some(inv) => [0, 1, 2].map(|i| (0..3).map(|j| inv[i][j] * g[j]).sum::<f64>()),
            None => {
                let n = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                g.map(|v| 0.1 * v / n)
            }
        };
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let cand = [0, 1, 2].map(|i| t[i] + step * dir[i]);
            let fc = model.log_post(&cand);
            if fc > f {
                let gain = fc - f;
                t = cand;
                f = fc;
                moved = gain > 1e-10;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let (_, hm) = grad_hess(&t);
    let neg: Mat3 = hm.map(|r| r.map(|v| -v));
    let cov = invert(&neg).filter(|c| cholesky(c).is_some());
    (t, cov)
}

fn initial_guess(model: &Model<'_>) -> [f64; 3] {
    let n = model.z.len() as f64;
    let ly: Vec<f64> = model.y.iter().map(|y| (y + 0.5).ln()).collect();
    let my = ly.iter().sum::<f64>() / n;
    let szz: f64 = model.z.iter().map(|z| z * z).sum();
    let b = if szz > 0.0 { model.z.iter().zip(&ly).map(|(z, l)| z * (l - my)).sum::<f64>() / szz } else { 0.0 };
    let mu: Vec<f64> = model.z.iter().map(|z| (my + b * z).exp()).collect();
    let excess: f64 = model.y.iter().zip(&mu).map(|(y, m)| (y - m).powi(2) - m).sum::<f64>() / n;
    let mu2 = mu.iter().map(|m| m * m).sum::<f64>() / n;
    let phi = if excess > 0.0 { mu2 / excess } else { 1e4 };
    [my, b, model.priors.s_of(phi.clamp(1.5, 1e6))]
}

struct ChainOut {
    kept: Vec<[f64; 3]>,
    acceptance: f64,
}

fn run_chain(model: &Model<'_>, start: [f64; 3], cov0: Mat3, cfg: &McmcConfig, chain: usize) -> ChainOut {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(chain as u64));
    let d = 3.0_f64;
    let mut chol = cholesky(&cov0).unwrap_or([[0.1, 0.0, 0.0], [0.0, 0.1, 0.0], [0.0, 0.0, 0.1]]);
    let mut log_scale = (2.38 / d.sqrt()).ln();

    // overdispersed start around the mode
    let z: [f64; 3] = [0; 3].map(|_| rng.sample::<f64, _>(StandardNormal));
    let mut t = [0, 1, 2].map(|i| start[i] + 2.0 * (0..=i).map(|j| chol[i][j] * z[j]).sum::<f64>());
    let mut lp = model.log_post(&t);
    if !lp.is_finite() {
        t = start;
        lp = model.log_post(&t);
    }

    // covariance re-estimated at the end of doubling windows; the last few
    // warmup iterations only tune the scale
    let last_cov = cfg.warmup - 50.min(cfg.warmup / 4);
    let mut len = 75;
    let mut window_end = len.min(last_cov);
    let mut since = 0usize;
    let mut window: Vec<[f64; 3]> = Vec::new();
    let mut kept = Vec::with_capacity(cfg.draws);
    let mut accepted = 0usize;
    for it in 0..cfg.warmup + cfg.draws {
        let z: [f64; 3] = [0; 3].map(|_| rng.sample::<f64, _>(StandardNormal));
        let scale = log_scale.exp();
        let cand = [0, 1, 2].map(|i| t[i] + scale * (0..=i).map(|j| chol[i][j] * z[j]).sum::<f64>());
        let lc = model.log_post(&cand);
        let log_u: f64 = rng.random::<f64>().ln();
        let accept_prob = if lc.is_finite() { (lc - lp).min(0.0).exp() } else { 0.0 };
        if lc.is_finite() && log_u < lc - lp {
            t = cand;
            lp = lc;
            if it >= cfg.warmup {
                accepted += 1;
            }
        }
        if it < cfg.warmup {
            since += 1;
            log_scale += (accept_prob - 0.3) / (since as f64).powf(0.6);
            window.push(t);
            if it + 1 == window_end {
                if let Some(c) = window_cov(&window) {
                    chol = c;
                    log_scale = (2.38 / d.sqrt()).ln();
                    since = 0;
                }
                window.clear();
                if window_end >= last_cov {
                    window_end = usize::MAX;
                } else {
                    len *= 2;
                    let next = window_end + len;
                    window_end = if next + 2 * len > last_cov { last_cov } else { next };
                }
            }
        } else {
            kept.push(t);
        }
    }
    ChainOut { kept, acceptance: if cfg.draws == 0 { 0.0 } else { accepted as f64 / cfg.draws as f64 } }
}

fn window_cov(w: &[[f64; 3]]) -> Option<Mat3> {
    let n = w.len();
    if n < 20 {
        return None;
    }
    let nf = n as f64;
    let mean = [0, 1, 2].map(|i| w.iter().map(|t| t[i]).sum::<f64>() / nf);
    let mut c = [[0.0; 3]; 3];
    for t in w {
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] += (t[i] - mean[i]) * (t[j] - mean[j]) / (nf - 1.0);
            }
        }
    }
    // shrink toward the diagonal as in Stan's windowed adaptation
    let shrink = nf / (nf + 5.0);
    for (i, row) in c.iter_mut().enumerate() {
        for v in row.iter_mut() {
            *v *= shrink;
        }
        row[i] += 1e-8 * (5.0 / (nf + 5.0)) + 1e-10;
    }
    cholesky(&c)
}

/// Posterior of (α, β, φ) given counts `ys` at predictor values `xs`.
pub fn fit_counts(
    xs: &[f64],
    ys: &[u64],
    priors: &Priors,
    cfg: &McmcConfig,
) -> Result<PosteriorSamples, EstimatorError> {
    priors.validate()?;
    if cfg.chains < 2 {
        return Err(EstimatorError::Invalid("at least two chains are required".into()));
    }
    if cfg.draws < 4 {
        return Err(EstimatorError::Invalid("at least four draws per chain are required".into()));
    }
    if xs.len() != ys.len() {
        return Err(EstimatorError::Invalid("predictor and count lengths differ".into()));
    }
    if xs.len() < 2 {
        return Err(EstimatorError::Degenerate("need at least two observations".into()));
    }
    let n = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / n;
    let x_sd = (xs.iter().map(|x| (x - x_mean).powi(2)).sum::<f64>() / n).sqrt();
    if !x_sd.is_finite() || x_sd <= 0.0 {
        return Err(EstimatorError::Degenerate("all predictor values are equal".into()));
    }
    let y: Vec<f64> = ys.iter().map(|&v| v as f64).collect();
    let model = Model { z: xs.iter().map(|x| (x - x_mean) / x_sd).collect(), y: &y, x_mean, x_sd, priors: *priors };
    let (mode, cov) = laplace(&model, initial_guess(&model));
    let cov = cov.unwrap_or([[0.01, 0.0, 0.0], [0.0, 0.01, 0.0], [0.0, 0.0, 0.04]]);

    let outs: Vec<ChainOut> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.chains)
            .map(|c| {
                let model = &model;
                scope.spawn(move || run_chain(model, mode, cov, cfg, c))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("chain panicked")).collect()
    });

    let draws: Vec<Draw> = outs.iter().flat_map(|o| o.kept.iter().map(|t| model.to_draw(t))).collect();
    let per_param = |f: &dyn Fn(&Draw) -> f64| -> ParamDiagnostics {
        let chains: Vec<Vec<f64>> = draws.chunks(cfg.draws).map(|c| c.iter().map(f).collect()).collect();
        ParamDiagnostics { rhat: split_rhat(&chains), ess: ess(&chains) }
    };
    let alpha = per_param(&|d| d.alpha);
    let beta = per_param(&|d| d.beta);
    let phi = per_param(&|d| d.phi.ln());
    let converged = [alpha, beta, phi].iter().all(|p| p.rhat < RHAT_MAX && p.ess > ESS_MIN);
    Ok(PosteriorSamples {
        draws,
        chains: cfg.chains,
        per_chain: cfg.draws,
        diagnostics: Diagnostics {
            alpha,
            beta,
            phi,
            acceptance: outs.iter().map(|o| o.acceptance).collect(),
            converged,
        },
        failed_diagnostics: !converged,
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use rand_distr::{Distribution, Gamma, Poisson};

    use super::*;

    pub(crate) fn simulate(alpha: f64, beta: f64, phi: f64, xs: &[f64], rng: &mut ChaCha8Rng) -> Vec<u64> {
        xs.iter()
            .map(|x| {
                let mu = (alpha + beta * x).exp();
                let lam = Gamma::new(phi, mu / phi).unwrap().sample(rng);
                Poisson::new(lam).map(|p| p.sample(rng) as u64).unwrap_or(0)
            })
            .collect()
    }

    fn brute_nb_pmf(y: u64, mu: f64, phi: f64) -> f64 {
        // C(y + φ - 1, y) p^φ (1-p)^y with p = φ/(φ+μ), by direct products
        let p = phi / (phi + mu);
        let mut c = 1.0;
        for j in 0..y {
            c *= (phi + j as f64) / (j as f64 + 1.0);
        }
        c * p.powf(phi) * (1.0 - p).powi(y as i32)
    }

    #[test]
    fn nb_pmf_matches_direct_formula() {
        for &(y, mu, phi) in &[(0u64, 3.0, 2.0), (5, 3.0, 2.0), (12, 10.0, 0.7), (40, 55.0, 10.0), (3, 0.5, 50.0)] {
            let a = nb_log_pmf(y, mu, phi).exp();
            let b = brute_nb_pmf(y, mu, phi);
            assert!((a - b).abs() < 1e-10 * b.max(1e-300), "{y} {mu} {phi}: {a} vs {b}");
        }
    }

    #[test]
    fn nb_pmf_sums_to_one() {
        let total: f64 = (0..2000).map(|y| nb_log_pmf(y, 40.0, 3.0).exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn large_dispersion_tends_to_poisson() {
        let poisson = |y: u64, mu: f64| (y as f64) * mu.ln() - mu - ln_gamma(y as f64 + 1.0);
        for phi in [1e7, 1e9, 1e12] {
            let a = nb_log_pmf(30, 25.0, phi);
            assert!((a - poisson(30, 25.0)).abs() < 1e-4, "{phi}");
        }
        // both branches of the rising factorial agree at the switch point
        assert!((ln_rising(17.0, 1e6 - 1.0) - ln_rising(17.0, 1e6 + 1.0)).abs() < 1e-4);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn matrix_helpers() {
        let m = [[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let inv = invert(&m).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| m[i][k] * inv[k][j]).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        let l = cholesky(&m).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| l[i][k] * l[j][k]).sum();
                assert!((v - m[i][j]).abs() < 1e-12);
            }
        }
        assert!(cholesky(&[[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).is_none());
    }

    fn small() -> McmcConfig {
        McmcConfig { chains: 4, warmup: 500, draws: 500, seed: 7 }
    }

    #[test]
    fn recovers_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (1..=66).map(f64::from).collect();
        let ys = simulate(4.0, 0.03, 10.0, &xs, &mut rng);
        let post = fit_counts(&xs, &ys, &Priors::default(), &McmcConfig::default()).unwrap();
        assert!(post.diagnostics.converged, "{:?}", post.diagnostics);
        assert!(post.alpha_interval(0.95).contains(4.0));
        assert!(post.beta_interval(0.95).contains(0.03));
        assert!(post.phi_interval(0.95).contains(10.0));
        for a in &post.diagnostics.acceptance {
            assert!((0.15..0.5).contains(a), "{a}");
        }
    }

    #[test]
    fn null_effect_interval_contains_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let xs: Vec<f64> = (1..=66).map(f64::from).collect();
        let ys = simulate(3.0, 0.0, 8.0, &xs, &mut rng);
        let post = fit_counts(&xs, &ys, &Priors::default(), &small()).unwrap();
        assert!(post.beta_interval(0.95).contains(0.0));
    }

    #[test]
    fn same_seed_same_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let xs: Vec<f64> = (0..30).map(f64::from).collect();
        let ys = simulate(2.0, 0.05, 5.0, &xs, &mut rng);
        let a = fit_counts(&xs, &ys, &Priors::default(), &small()).unwrap();
        let b = fit_counts(&xs, &ys, &Priors::default(), &small()).unwrap();
        assert_eq!(a, b);
        let bits = |p: &PosteriorSamples| p.draws.iter().map(|d| d.alpha.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = fit_counts(&xs, &ys, &Priors::default(), &McmcConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn phi_is_positive_and_above_one_under_log_gamma_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let xs: Vec<f64> = (0..20).map(f64::from).collect();
        let ys = simulate(1.0, 0.1, 2.0, &xs, &mut rng);
        let post = fit_counts(&xs, &ys, &Priors::default(), &small()).unwrap();
        assert!(post.draws.iter().all(|d| d.phi > 1.0));
        let exp = Priors { phi: PhiPrior::Exponential { rate: 1.0 }, ..Priors::default() };
        let post = fit_counts(&xs, &ys, &exp, &small()).unwrap();
        assert!(post.draws.iter().all(|d| d.phi > 0.0));
    }

    #[test]
    fn underdispersed_cumulative_data_still_fits() {
        // smooth cumulative minutes, far less noisy than Poisson
        let xs: Vec<f64> = (0..=65).map(f64::from).collect();
        let ys: Vec<u64> = xs.iter().map(|x| (1194.0 + 180.0 * (x + 1.0).ln()).round() as u64).collect();
        let post = fit_counts(&xs, &ys, &Priors::default(), &small()).unwrap();
        assert!(post.draws.iter().all(|d| d.phi.is_finite() && d.phi > 0.0));
    }

    #[test]
    fn rejects_bad_configs() {
        let xs = [0.0, 1.0, 2.0];
        let ys = [1, 2, 3];
        let one_chain = McmcConfig { chains: 1, ..small() };
        assert!(fit_counts(&xs, &ys, &Priors::default(), &one_chain).is_err());
        assert!(fit_counts(&[1.0, 1.0], &[1, 2], &Priors::default(), &small()).is_err());
        assert!(fit_counts(&xs, &ys[..2], &Priors::default(), &small()).is_err());
    }
}
