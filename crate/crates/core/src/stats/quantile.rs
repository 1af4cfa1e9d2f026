//! Nearest-rank percentiles.

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum QuantileError {
    #[error("percentile of an empty sample")]
    EmptyInput,
}

/// 1-based nearest rank `ceil(q n)`, clamped to `[1, n]`.
pub fn nearest_rank(q: f64, n: usize) -> usize {
    assert!((0.0..=1.0).contains(&q), "quantile must lie in [0,1]");
    // the epsilon absorbs representation error in products such as 0.1 * 30
    let r = (q * n as f64 - 1e-9).ceil();
    (r.max(1.0) as usize).min(n)
}

/// Nearest-rank percentile of an unsorted sample; NaNs sort last.
pub fn percentile(values: &[f64], q: f64) -> Result<f64, QuantileError> {
    if values.is_empty() {
        return Err(QuantileError::EmptyInput);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v[nearest_rank(q, v.len()) - 1])
}

/// Nearest-rank percentile of an already sorted sample.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> Result<f64, QuantileError> {
    if sorted.is_empty() {
        return Err(QuantileError::EmptyInput);
    }
    Ok(sorted[nearest_rank(q, sorted.len()) - 1])
}

pub fn median(values: &[f64]) -> Result<f64, QuantileError> {
    percentile(values, 0.5)
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}
