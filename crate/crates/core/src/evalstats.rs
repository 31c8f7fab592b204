//! Aggregate statistics over evaluation curves: area ratio, interquartile
//! mean, stratified bootstrap intervals and performance profiles.

use rand::Rng as _;

use crate::rng::Rng;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("baseline area {0} is too close to zero for a ratio")]
    UndefinedRatio(f64),
    #[error("curves do not share the same update-step grid")]
    GridMismatch,
    #[error("curve needs at least two points with strictly increasing steps")]
    BadCurve,
    #[error("empty sample")]
    Empty,
}

/// Trapezoidal area under `(step, value)` points, divided by the step span.
pub fn normalized_area(curve: &[(f64, f64)]) -> Result<f64, StatsError> {
    if curve.len() < 2 || curve.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(StatsError::BadCurve);
    }
    let area: f64 = curve
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum();
    let span = curve[curve.len() - 1].0 - curve[0].0;
    Ok(area / span)
}

/// `(A_prior - A) / A` for normalised areas under the two curves.
pub fn area_ratio(prior: &[(f64, f64)], baseline: &[(f64, f64)]) -> Result<f64, StatsError> {
    if prior.len() != baseline.len() || prior.iter().zip(baseline).any(|(p, b)| p.0 != b.0) {
        return Err(StatsError::GridMismatch);
    }
    let a = normalized_area(baseline)?;
    if a.abs() < 1e-12 {
        return Err(StatsError::UndefinedRatio(a));
    }
    Ok((normalized_area(prior)? - a) / a)
}

/// Interquartile mean with fractional trimming.
///
/// Each sorted value owns a unit slot on `[0, n)`; the result is the average
/// over `[n/4, 3n/4)`, so boundary values contribute with partial weight when
/// `n` is not a multiple of four.
pub fn iqm(values: &[f64]) -> Result<f64, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(iqm_sorted(&sorted))
}

fn iqm_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let (lo, hi) = (0.25 * n, 0.75 * n);
    let first = lo.floor() as usize;
    let last = (hi.ceil() as usize).min(sorted.len());
    let mut acc = 0.0;
    for (i, v) in sorted.iter().enumerate().take(last).skip(first) {
        let i = i as f64;
        let overlap = (i + 1.0).min(hi) - i.max(lo);
        if overlap > 0.0 {
            acc += overlap * v;
        }
    }
    acc / (hi - lo)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Percentile bootstrap interval. Each resample draws with replacement within
/// every stratum, pools the strata, and applies `statistic`.
pub fn stratified_bootstrap_ci<F>(
    strata: &[Vec<f64>],
    statistic: F,
    n_resamples: usize,
    confidence: f64,
    rng: &mut Rng,
) -> Result<(f64, f64), StatsError>
where
    F: Fn(&[f64]) -> f64,
{
    if strata.is_empty() || strata.iter().any(Vec::is_empty) {
        return Err(StatsError::Empty);
    }
    let total: usize = strata.iter().map(Vec::len).sum();
    let mut pooled = Vec::with_capacity(total);
    let mut stats = Vec::with_capacity(n_resamples);
    for _ in 0..n_resamples {
        pooled.clear();
        for stratum in strata {
            pooled.extend((0..stratum.len()).map(|_| stratum[rng.gen_range(0..stratum.len())]));
        }
        stats.push(statistic(&pooled));
    }
    stats.sort_by(f64::total_cmp);
    let alpha = 1.0 - confidence;
    Ok((quantile_sorted(&stats, alpha / 2.0), quantile_sorted(&stats, 1.0 - alpha / 2.0)))
}

/// [`stratified_bootstrap_ci`] with the IQM statistic.
pub fn iqm_bootstrap_ci(strata: &[Vec<f64>], n_resamples: usize, confidence: f64, rng: &mut Rng) -> Result<(f64, f64), StatsError> {
    stratified_bootstrap_ci(
        strata,
        |xs| {
            let mut s = xs.to_vec();
            s.sort_by(f64::total_cmp);
            iqm_sorted(&s)
        },
        n_resamples,
        confidence,
        rng,
    )
}

/// Fraction of values at or above each threshold.
pub fn performance_profile(values: &[f64], thresholds: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    thresholds
        .iter()
        .map(|&t| {
            let below = sorted.partition_point(|&v| v < t);
            (t, (sorted.len() - below) as f64 / n)
        })
        .collect()
}

/// Mean with a normal-approximation half-width `z * SEM`.
pub fn mean_with_sem_ci(values: &[f64], z: f64) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let m = mean(values);
    if values.len() == 1 {
        return Some((m, 0.0));
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    Some((m, z * (var / values.len() as f64).sqrt()))
}

/// Evenly spaced grid from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}
