//! Trade-based liquidity measures.
//!
//! Every measure implements [`Measure`] and is registered by name in a
//! [`MeasureRegistry`]. Measures see one book's trades in time order plus the
//! grid-sampled mid series of that book; the trade source is only a tag on
//! the output row.

pub mod impact;
pub mod spread;

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::feed::{sample_book, BookEvent, GridSpec, MidSeries};
use crate::io::{Column, Table, TableError};
use crate::trade::{SignedTrade, TradeSource};

pub use impact::{Amihud, KyleLambda};
pub use spread::{AbdiRanaldo, DollarWeightedEffective, Effective, Realized, Roll};

pub const EFFECTIVE: &str = "effective_half";
pub const EFFECTIVE_DW: &str = "effective_half_dw";
pub const REALIZED: &str = "realized_half";
pub const ROLL: &str = "roll";
pub const ABDI_RANALDO: &str = "abdi_ranaldo";
pub const KYLE_LAMBDA: &str = "kyle_lambda";
pub const AMIHUD: &str = "amihud";
pub const GH_C: &str = "gh_c";
pub const GH_PHI: &str = "gh_phi";

pub const DEFAULT_STEP_SECS: f64 = 60.0;
pub const SWEEP_STEPS_SECS: [f64; 4] = [1.0, 10.0, 60.0, 300.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MeasureError {
    #[error("no trades")]
    NoTrades,
    #[error("no trade has a mid at its lookup time")]
    NoMid,
    #[error("no trade has a mid after the lag")]
    NoFutureMid,
    #[error("fewer than three price changes")]
    InsufficientTrades,
    #[error("price-change autocovariance is positive")]
    PositiveAutocovariance,
    #[error("fewer than two usable buckets")]
    InsufficientBuckets,
    #[error("signed flow has no variance across buckets")]
    DegenerateRegressor,
    #[error("no bucket with volume and returns")]
    NoVolume,
    #[error("decomposition inputs missing")]
    NotConverged,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureParams {
    pub realized_lag_secs: f64,
    pub amihud_bucket_secs: f64,
}

impl Default for MeasureParams {
    fn default() -> Self {
        MeasureParams {
            realized_lag_secs: 60.0,
            amihud_bucket_secs: 86_400.0,
        }
    }
}

/// One book's trades (sorted by time) and mid series.
pub struct MeasureInput<'a> {
    pub trades: &'a [&'a SignedTrade],
    pub mids: &'a MidSeries,
    pub params: MeasureParams,
}

pub trait Measure: Send + Sync {
    fn name(&self) -> &'static str;
    fn compute(&self, input: &MeasureInput<'_>) -> Result<f64, MeasureError>;
}

pub struct MeasureRegistry {
    measures: BTreeMap<&'static str, Box<dyn Measure>>,
}

impl MeasureRegistry {
    pub fn empty() -> Self {
        MeasureRegistry {
            measures: BTreeMap::new(),
        }
    }

    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Effective));
        r.register(Box::new(DollarWeightedEffective));
        r.register(Box::new(Realized));
        r.register(Box::new(Roll));
        r.register(Box::new(AbdiRanaldo));
        r.register(Box::new(KyleLambda));
        r.register(Box::new(Amihud));
        r
    }

    pub fn register(&mut self, m: Box<dyn Measure>) {
        self.measures.insert(m.name(), m);
    }

    pub fn get(&self, name: &str) -> Option<&dyn Measure> {
        self.measures.get(name).map(|b| b.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.measures.keys().copied().collect()
    }

    /// Keeps only the named measures; unknown names are returned.
    pub fn select(mut self, names: &[&str]) -> Result<Self, String> {
        if let Some(bad) = names.iter().find(|n| !self.measures.contains_key(**n)) {
            return Err(bad.to_string());
        }
        self.measures.retain(|k, _| names.contains(k));
        Ok(self)
    }
}

impl Default for MeasureRegistry {
    fn default() -> Self {
        Self::with_defaults()
    }
}

/// Glosten-Harris split: `c` is the realized half-spread, `phi` the residual.
pub fn gh_decompose(effective: Option<f64>, realized: Option<f64>) -> Result<(f64, f64), MeasureError> {
    match (effective, realized) {
        (Some(e), Some(r)) if e.is_finite() && r.is_finite() => Ok((r, e - r)),
        _ => Err(MeasureError::NotConverged),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureRow {
    pub market_id: Arc<str>,
    pub token_id: Arc<str>,
    pub source: TradeSource,
    pub sample_step: f64,
    pub n_trades: usize,
    /// Measure values by name; `None` when undefined.
    pub values: BTreeMap<String, Option<f64>>,
}

impl MeasureRow {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied().flatten()
    }
}

/// Computes every registered measure plus the decomposition for one book.
pub fn compute_row(
    registry: &MeasureRegistry,
    source: TradeSource,
    trades: &[&SignedTrade],
    mids: &MidSeries,
    params: MeasureParams,
    market_id: Arc<str>,
    token_id: Arc<str>,
) -> MeasureRow {
    let mut sorted: Vec<&SignedTrade> = trades.to_vec();
    sorted.sort_by(|a, b| a.ts.total_cmp(&b.ts));
    let input = MeasureInput {
        trades: &sorted,
        mids,
        params,
    };
    let mut values: BTreeMap<String, Option<f64>> = registry
        .measures
        .values()
        .map(|m| (m.name().to_string(), m.compute(&input).ok().filter(|v| v.is_finite())))
        .collect();
    let gh = gh_decompose(
        values.get(EFFECTIVE).copied().flatten(),
        values.get(REALIZED).copied().flatten(),
    )
    .ok();
    values.insert(GH_C.to_string(), gh.map(|g| g.0));
    values.insert(GH_PHI.to_string(), gh.map(|g| g.1));
    MeasureRow {
        market_id,
        token_id,
        source,
        sample_step: mids.step_secs(),
        n_trades: sorted.len(),
        values,
    }
}

/// A book to measure: its identity, mids, and trades.
pub struct BookTrades<'a> {
    pub market_id: Arc<str>,
    pub token_id: Arc<str>,
    pub mids: &'a MidSeries,
    pub trades: Vec<&'a SignedTrade>,
}

/// Rows for many books in parallel, sorted by market then token.
pub fn measure_panel(
    registry: &MeasureRegistry,
    source: TradeSource,
    books: &[BookTrades<'_>],
    params: MeasureParams,
) -> Vec<MeasureRow> {
    let mut rows: Vec<MeasureRow> = books
        .par_iter()
        .map(|b| compute_row(registry, source, &b.trades, b.mids, params, b.market_id.clone(), b.token_id.clone()))
        .collect();
    rows.sort_by(|a, b| (&a.market_id, &a.token_id).cmp(&(&b.market_id, &b.token_id)));
    rows
}

/// Recomputes every measure with the book resampled at each step.
pub fn sample_step_sweep(
    registry: &MeasureRegistry,
    source: TradeSource,
    events: &[&BookEvent],
    trades: &[&SignedTrade],
    steps_secs: &[f64],
    params: MeasureParams,
) -> Vec<MeasureRow> {
    let Some(first) = events.first() else {
        return Vec::new();
    };
    steps_secs
        .iter()
        .filter_map(|&step| {
            let step_ms = (step * 1000.0).round() as i64;
            let ts = events
                .iter()
                .map(|e| e.ts_received)
                .chain(trades.iter().map(|t| (t.ts * 1000.0).round() as i64));
            let grid = GridSpec::covering_ts(ts, step_ms)?;
            let sampled = sample_book(events, grid)?;
            Some(compute_row(
                registry,
                source,
                trades,
                &sampled.series,
                params,
                first.market_id.clone(),
                first.token_id.clone(),
            ))
        })
        .collect()
}

/// `(value - base) / |base|` per measure for each row against the row at `base_step`.
pub fn relative_deviations(rows: &[MeasureRow], base_step: f64) -> Vec<(f64, BTreeMap<String, Option<f64>>)> {
    let Some(base) = rows.iter().find(|r| r.sample_step == base_step) else {
        return Vec::new();
    };
    rows.iter()
        .map(|r| {
            let devs = r
                .values
                .iter()
                .map(|(k, v)| {
                    let d = match (v, base.get(k)) {
                        (Some(v), Some(b)) if b != 0.0 => Some((v - b) / b.abs()),
                        (Some(v), Some(_)) if *v == 0.0 => Some(0.0),
                        _ => None,
                    };
                    (k.clone(), d)
                })
                .collect();
            (r.sample_step, devs)
        })
        .collect()
}

const FIXED_COLUMNS: [&str; 5] = ["market_id", "token_id", "source", "sample_step", "n_trades"];

pub fn rows_table(rows: &[MeasureRow]) -> Table {
    let mut names: Vec<String> = rows.iter().flat_map(|r| r.values.keys().cloned()).collect();
    names.sort();
    names.dedup();
    let mut t = Table::new()
        .with("market_id", Column::Str(rows.iter().map(|r| Some(r.market_id.to_string())).collect()))
        .with("token_id", Column::Str(rows.iter().map(|r| Some(r.token_id.to_string())).collect()))
        .with("source", Column::Str(rows.iter().map(|r| Some(r.source.as_str().to_string())).collect()))
        .with("sample_step", Column::F64(rows.iter().map(|r| Some(r.sample_step)).collect()))
        .with("n_trades", Column::I64(rows.iter().map(|r| Some(r.n_trades as i64)).collect()));
    for n in &names {
        t = t.with(n, Column::F64(rows.iter().map(|r| r.get(n)).collect()));
    }
    t.set_metadata("schema", "measure_row.v1");
    t.set_metadata("units", "spreads in probability points; kyle_lambda per USDC; amihud per USDC");
    t
}

#[derive(Debug, thiserror::Error)]
pub enum MeasureTableError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("row {0}: bad identity columns")]
    BadRow(usize),
}

pub fn table_rows(t: &Table) -> Result<Vec<MeasureRow>, MeasureTableError> {
    let market = t.strs("market_id")?;
    let token = t.strs("token_id")?;
    let source = t.strs("source")?;
    let step = t.f64s("sample_step")?;
    let n = t.i64s("n_trades")?;
    let measure_cols: Vec<(&String, &[Option<f64>])> = t
        .names()
        .iter()
        .filter(|c| !FIXED_COLUMNS.contains(&c.as_str()))
        .map(|c| Ok((c, t.f64s(c)?)))
        .collect::<Result<_, TableError>>()?;
    (0..t.num_rows())
        .map(|r| {
            let bad = || MeasureTableError::BadRow(r);
            Ok(MeasureRow {
                market_id: Arc::from(market[r].as_deref().ok_or_else(bad)?),
                token_id: Arc::from(token[r].as_deref().ok_or_else(bad)?),
                source: source[r].as_deref().and_then(TradeSource::parse).ok_or_else(bad)?,
                sample_step: step[r].ok_or_else(bad)?,
                n_trades: n[r].ok_or_else(bad)? as usize,
                values: measure_cols.iter().map(|(c, v)| ((*c).clone(), v[r])).collect(),
            })
        })
        .collect()
}
