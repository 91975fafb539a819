//! Effective sample size from autocorrelations, truncated with Geyer's
//! initial monotone sequence.

use ndarray::{ArrayView2, ArrayView3, Axis};

fn autocovariance(centered: &[f64], lag: usize) -> f64 {
    let n = centered.len();
    centered[..n - lag]
        .iter()
        .zip(&centered[lag..])
        .map(|(a, b)| a * b)
        .sum::<f64>()
        / n as f64
}

/// ESS of one scalar series. Constant series have ESS 0.
pub fn ess_1d(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 2 {
        return 0.0;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let c0 = autocovariance(&centered, 0);
    if c0 <= f64::EPSILON * mean.abs().max(1.0) * f64::EPSILON {
        return 0.0;
    }
    let mut total = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = (autocovariance(&centered, 2 * k) + autocovariance(&centered, 2 * k + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        total += pair;
        prev = pair;
        k += 1;
    }
    let tau = (2.0 * total - 1.0).max(1.0 / (n as f64).log10().max(1.0));
    n as f64 / tau
}

/// Per-variable ESS of one chain (`draws × variables`).
pub fn ess(chain: ArrayView2<'_, f64>) -> Vec<f64> {
    chain
        .axis_iter(Axis(1))
        .map(|col| ess_1d(&col.to_vec()))
        .collect()
}

/// Per-variable ESS over `chains × draws × variables`, summing the
/// per-chain estimates.
pub fn ess_multi(draws: ArrayView3<'_, f64>) -> Vec<f64> {
    let dim = draws.len_of(Axis(2));
    let mut total = vec![0.0; dim];
    for chain in draws.axis_iter(Axis(0)) {
        for (t, e) in total.iter_mut().zip(ess(chain)) {
            *t += e;
        }
    }
    total
}
