use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{quantile_sorted, sample_variance};
use crate::error::{Error, Result};
use crate::rng;

pub const MIN_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapCi {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_resamples: usize,
    pub level: f64,
}

impl BootstrapCi {
    pub fn half_width(&self) -> f64 {
        (self.ci_high - self.ci_low) / 2.0
    }
}

/// Percentile bootstrap of `statistic` over `data`.
///
/// Resample `r` draws from its own stream, so the result does not depend on
/// how rayon schedules the work.
pub fn bootstrap_percentile<F>(
    data: &[f64],
    statistic: F,
    n_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapCi>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!(
            "confidence level {level} not in (0, 1)"
        )));
    }
    if n_resamples == 0 {
        return Err(Error::Config(
            "bootstrap needs at least one resample".into(),
        ));
    }
    if data.is_empty() {
        return Err(Error::EmptyInput("bootstrap data".into()));
    }
    let n = data.len();
    let mut stats: Vec<f64> = (0..n_resamples as u64)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n),
            |buf, r| {
                let mut rng = rng::indexed_substream(seed, rng::BOOTSTRAP, r);
                buf.clear();
                buf.extend((0..n).map(|_| data[rng.random_range(0..n)]));
                statistic(buf)
            },
        )
        .collect();
    stats.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    Ok(BootstrapCi {
        point: statistic(data),
        ci_low: quantile_sorted(&stats, alpha / 2.0),
        ci_high: quantile_sorted(&stats, 1.0 - alpha / 2.0),
        n_resamples,
        level,
    })
}

/// Variance of per-user mean scores with a user-level percentile bootstrap CI.
pub fn user_bootstrap_variance(
    user_means: &[f64],
    n_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapCi> {
    if user_means.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "variance CI needs at least 2 users (got {})",
            user_means.len()
        )));
    }
    if n_resamples < MIN_RESAMPLES {
        return Err(Error::Config(format!(
            "at least {MIN_RESAMPLES} resamples required (got {n_resamples})"
        )));
    }
    bootstrap_percentile(user_means, sample_variance, n_resamples, level, seed)
}
