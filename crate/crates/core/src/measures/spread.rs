//! Spread measures: effective, realized, Roll and Abdi-Ranaldo.

use super::{Measure, MeasureError, MeasureInput, ABDI_RANALDO, EFFECTIVE, EFFECTIVE_DW, REALIZED, ROLL};

/// Mean of `sign * (price - mid)` with the mid at the last grid point at or
/// before the trade.
pub struct Effective;

/// Effective half-spread weighted by trade USDC size.
pub struct DollarWeightedEffective;

/// Mean of `sign * (price - mid(t + lag))`.
pub struct Realized;

/// `2 * sqrt(-cov(dp_t, dp_{t-1}))` on trade-price changes.
pub struct Roll;

/// Close-high-low estimator on the per-interval mid path.
pub struct AbdiRanaldo;

fn signed_deviations<'a>(input: &'a MeasureInput<'_>, lag: f64) -> impl Iterator<Item = (f64, f64)> + 'a {
    input.trades.iter().filter_map(move |t| {
        let mid = input.mids.mid_at(t.ts + lag)?;
        Some((t.sign.as_f64() * (t.price - mid), t.size_usdc()))
    })
}

impl Measure for Effective {
    fn name(&self) -> &'static str {
        EFFECTIVE
    }

    fn compute(&self, input: &MeasureInput<'_>) -> Result<f64, MeasureError> {
        if input.trades.is_empty() {
            return Err(MeasureError::NoTrades);
        }
        let (sum, n) = signed_deviations(input, 0.0).fold((0.0, 0usize), |(s, n), (d, _)| (s + d, n + 1));
        if n == 0 {
            return Err(MeasureError::NoMid);
        }
        Ok(sum / n as f64)
    }
}

impl Measure for DollarWeightedEffective {
    fn name(&self) -> &'static str {
        EFFECTIVE_DW
    }

    fn compute(&self, input: &MeasureInput<'_>) -> Result<f64, MeasureError> {
        if input.trades.is_empty() {
            return Err(MeasureError::NoTrades);
        }
        let (num, den) = signed_deviations(input, 0.0).fold((0.0, 0.0), |(a, b), (d, w)| (a + d * w, b + w));
        if den <= 0.0 {
            return Err(MeasureError::NoMid);
        }
        Ok(num / den)
    }
}

impl Measure for Realized {
    fn name(&self) -> &'static str {
        REALIZED
    }

    fn compute(&self, input: &MeasureInput<'_>) -> Result<f64, MeasureError> {
        if input.trades.is_empty() {
            return Err(MeasureError::NoTrades);
        }
        // trades with no mid at their own time are excluded, as for the effective spread
        let (sum, n) = input
            .trades
            .iter()
            .filter(|t| input.mids.mid_at(t.ts).is_some())
            .filter_map(|t| {
                let later = input.mids.mid_at(t.ts + input.params.realized_lag_secs)?;
                Some(t.sign.as_f64() * (t.price - later))
            })
            .fold((0.0, 0usize), |(s, n), d| (s + d, n + 1));
        if n == 0 {
            return Err(MeasureError::NoFutureMid);
        }
        Ok(sum / n as f64)
    }
}

/// Roll spread from a price sequence.
pub fn roll_from_prices(prices: &[f64]) -> Result<f64, MeasureError> {
    if prices.len() < 4 {
        return Err(MeasureError::InsufficientTrades);
    }
    let d: Vec<f64> = prices.windows(2).map(|w| w[1] - w[0]).collect();
    let x = &d[1..];
    let y = &d[..d.len() - 1];
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    if cov > 0.0 {
        Err(MeasureError::PositiveAutocovariance)
    } else {
        Ok(2.0 * (-cov).sqrt())
    }
}

impl Measure for Roll {
    fn name(&self) -> &'static str {
        ROLL
    }

    fn compute(&self, input: &MeasureInput<'_>) -> Result<f64, MeasureError> {
        let prices: Vec<f64> = input.trades.iter().map(|t| t.price).collect();
        roll_from_prices(&prices)
    }
}

impl Measure for AbdiRanaldo {
    fn name(&self) -> &'static str {
        ABDI_RANALDO
    }

    fn compute(&self, input: &MeasureInput<'_>) -> Result<f64, MeasureError> {
        let hlc = &input.mids.hlc;
        let (sum, n) = hlc
            .windows(2)
            .filter_map(|w| {
                let (a, b) = (w[0]?, w[1]?);
                let eta_a = (a.high + a.low) / 2.0;
                let eta_b = (b.high + b.low) / 2.0;
                Some((a.close - eta_a) * (a.close - eta_b))
            })
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        if n == 0 {
            return Err(MeasureError::InsufficientBuckets);
        }
        Ok(2.0 * (sum / n as f64).max(0.0).sqrt())
    }
}
