//! Price-impact measures: Kyle's lambda and Amihud illiquidity.

use std::collections::BTreeMap;

use super::{Measure, MeasureError, MeasureInput, AMIHUD, KYLE_LAMBDA};

/// OLS slope of the mid change over a grid interval on the signed USDC flow
/// traded in it, intercept included. A trade at `t` belongs to the interval
/// starting at the last grid point at or before `t`, the same point its mid is
/// looked up at, so the change runs from that point to the next.
pub struct KyleLambda;

/// Mean over calendar buckets of `|relative mid return| / USDC volume`.
pub struct Amihud;

/// `(signed flow in USDC, mid change)` for each grid interval holding trades.
pub fn flow_buckets(input: &MeasureInput<'_>) -> Vec<(f64, f64)> {
    let mut flow: BTreeMap<usize, i128> = BTreeMap::new();
    for t in input.trades {
        if let Some(k) = input.mids.index_at(t.ts) {
            *flow.entry(k).or_default() += t.signed_usdc_micro();
        }
    }
    flow.into_iter()
        .filter_map(|(k, f)| {
            let a = input.mids.mid_at_index(k)?;
            let b = input.mids.mid_at_index(k + 1)?;
            Some((f as f64 / 1e6, b - a))
        })
        .collect()
}

/// Slope of `y` on `x` with intercept.
pub fn ols_slope(points: &[(f64, f64)]) -> Result<f64, MeasureError> {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let scale: f64 = points.iter().map(|p| p.0 * p.0).sum();
    if sxx <= 1e-24 * scale.max(f64::MIN_POSITIVE) {
        return Err(MeasureError::DegenerateRegressor);
    }
    Ok(sxy / sxx)
}

impl Measure for KyleLambda {
    fn name(&self) -> &'static str {
        KYLE_LAMBDA
    }

    fn compute(&self, input: &MeasureInput<'_>) -> Result<f64, MeasureError> {
        if input.trades.is_empty() {
            return Err(MeasureError::NoTrades);
        }
        let buckets = flow_buckets(input);
        if buckets.iter().filter(|b| b.0 != 0.0).count() < 3 {
            return Err(MeasureError::InsufficientBuckets);
        }
        ols_slope(&buckets)
    }
}

impl Measure for Amihud {
    fn name(&self) -> &'static str {
        AMIHUD
    }

    fn compute(&self, input: &MeasureInput<'_>) -> Result<f64, MeasureError> {
        if input.trades.is_empty() {
            return Err(MeasureError::NoTrades);
        }
        let width = input.params.amihud_bucket_secs;
        let mut volume: BTreeMap<i64, u64> = BTreeMap::new();
        for t in input.trades {
            *volume.entry((t.ts / width).floor() as i64).or_default() += t.usdc_micro;
        }
        let grid = &input.mids.grid;
        let step = grid.step_ms as f64 / 1000.0;
        let last = grid.len().checked_sub(1).ok_or(MeasureError::NoVolume)?;
        let first_ts = grid.start_ms as f64 / 1000.0;
        let (sum, n) = volume
            .into_iter()
            .filter(|&(_, v)| v > 0)
            .filter_map(|(b, v)| {
                let lo = b as f64 * width;
                let hi = lo + width;
                let k0 = ((lo - first_ts) / step).ceil().max(0.0) as usize;
                let k1 = (((hi - first_ts) / step).ceil() as i64 - 1).min(last as i64);
                if k1 < k0 as i64 {
                    return None;
                }
                let open = input.mids.mid_at_index(k0)?;
                let close = input.mids.mid_at_index(k1 as usize)?;
                Some((close / open - 1.0).abs() / (v as f64 / 1e6))
            })
            .fold((0.0, 0usize), |(s, n), r| (s + r, n + 1));
        if n == 0 {
            return Err(MeasureError::NoVolume);
        }
        Ok(sum / n as f64)
    }
}
