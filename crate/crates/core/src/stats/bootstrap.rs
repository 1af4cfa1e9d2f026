//! Cluster-resampling percentile bootstrap.

use rand::Rng;
use rayon::prelude::*;

use super::quantile::percentile_sorted;
use super::rng::resample_rng;

pub const DEFAULT_RESAMPLES: usize = 1000;
pub const MIN_RESAMPLES: usize = 200;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BootstrapError {
    #[error("need at least two clusters, got {0}")]
    DegenerateClusters(usize),
    #[error("need at least {MIN_RESAMPLES} resamples, got {0}")]
    TooFewResamples(usize),
    #[error("the statistic was undefined on every resample")]
    NoFiniteResamples,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapCi {
    pub lo: f64,
    pub hi: f64,
    /// Resamples on which the statistic was defined.
    pub valid: usize,
}

/// Cluster indices drawn with replacement for resample `i`.
pub fn resample_indices(seed: u64, i: u64, n: usize) -> Vec<usize> {
    let mut rng = resample_rng(seed, i);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Statistic on each of `b` resamples of the clusters, in resample order.
/// `None` or non-finite values mark resamples where it is undefined.
pub fn bootstrap_distribution<T, F>(clusters: &[T], b: usize, seed: u64, statistic: F) -> Vec<Option<f64>>
where
    T: Sync,
    F: Fn(&[&T]) -> Option<f64> + Sync,
{
    (0..b as u64)
        .into_par_iter()
        .map(|i| {
            let idx = resample_indices(seed, i, clusters.len());
            let sample: Vec<&T> = idx.iter().map(|&j| &clusters[j]).collect();
            statistic(&sample).filter(|v| v.is_finite())
        })
        .collect()
}

/// 95% percentile interval (2.5th and 97.5th nearest-rank percentiles).
pub fn clustered_bootstrap_ci<T, F>(clusters: &[T], b: usize, seed: u64, statistic: F) -> Result<BootstrapCi, BootstrapError>
where
    T: Sync,
    F: Fn(&[&T]) -> Option<f64> + Sync,
{
    clustered_bootstrap_ci_level(clusters, b, seed, 0.95, statistic)
}

pub fn clustered_bootstrap_ci_level<T, F>(
    clusters: &[T],
    b: usize,
    seed: u64,
    conf: f64,
    statistic: F,
) -> Result<BootstrapCi, BootstrapError>
where
    T: Sync,
    F: Fn(&[&T]) -> Option<f64> + Sync,
{
    if clusters.len() < 2 {
        return Err(BootstrapError::DegenerateClusters(clusters.len()));
    }
    if b < MIN_RESAMPLES {
        return Err(BootstrapError::TooFewResamples(b));
    }
    let mut stats: Vec<f64> = bootstrap_distribution(clusters, b, seed, statistic)
        .into_iter()
        .flatten()
        .collect();
    if stats.is_empty() {
        return Err(BootstrapError::NoFiniteResamples);
    }
    stats.sort_by(f64::total_cmp);
    let a = (1.0 - conf) / 2.0;
    Ok(BootstrapCi {
        lo: percentile_sorted(&stats, a).expect("non-empty"),
        hi: percentile_sorted(&stats, 1.0 - a).expect("non-empty"),
        valid: stats.len(),
    })
}

/// Mean as an offset from the first value, so equal inputs return that value exactly.
pub fn mean_of(values: &[&f64]) -> Option<f64> {
    let first = **values.first()?;
    Some(first + values.iter().map(|&&v| v - first).sum::<f64>() / values.len() as f64)
}
