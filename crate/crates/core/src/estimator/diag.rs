//! Convergence diagnostics over equally long chains.

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

fn split(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0) / 2;
    chains.iter().flat_map(|c| [&c[..n], &c[n..2 * n]]).collect()
}

/// (W, var+) of the split chains.
fn variances(parts: &[&[f64]]) -> (f64, f64) {
    let n = parts[0].len() as f64;
    let w = parts.iter().map(|c| var(c)).sum::<f64>() / parts.len() as f64;
    let means: Vec<f64> = parts.iter().map(|c| mean(c)).collect();
    let b = n * var(&means);
    (w, (n - 1.0) / n * w + b / n)
}

/// Potential scale reduction over chains split in halves. Returns NaN when
/// the chains are too short and 1 when every draw is identical.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let parts = split(chains);
    if parts.len() < 2 || parts[0].len() < 2 {
        return f64::NAN;
    }
    let (w, var_plus) = variances(&parts);
    if w == 0.0 {
        return if var_plus == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (var_plus / w).sqrt()
}

/// Effective sample size with Geyer's initial positive sequence over the
/// split chains' variogram autocorrelation.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let parts = split(chains);
    if parts.len() < 2 || parts[0].len() < 4 {
        return f64::NAN;
    }
    let n = parts[0].len();
    let total = (n * parts.len()) as f64;
    let (_, var_plus) = variances(&parts);
    if var_plus == 0.0 {
        return total;
    }
    let rho = |t: usize| -> f64 {
        let v: f64 =
            parts.iter().map(|c| (t..n).map(|i| (c[i] - c[i - t]).powi(2)).sum::<f64>() / (n - t) as f64).sum::<f64>()
                / parts.len() as f64;
        1.0 - v / (2.0 * var_plus)
    };
    // tau = -1 + 2 * sum of positive pair sums, pairs monotonically capped
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = if t == 0 { 1.0 + rho(1) } else { rho(t) + rho(t + 1) };
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        t += 2;
    }
    total / tau.max(1.0 / total.log10().max(1.0))
}
