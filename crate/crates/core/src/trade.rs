//! The unified trade record consumed by every measure, whatever its origin.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use crate::io::{Column, Table, TableError};
use crate::units::{Side, Sign, Tick, BASE_UNITS, TICKS_PER_UNIT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TradeSource {
    Onchain,
    InferredLoose,
    InferredStrict,
}

impl TradeSource {
    pub fn as_str(self) -> &'static str {
        match self {
            TradeSource::Onchain => "onchain",
            TradeSource::InferredLoose => "inferred_loose",
            TradeSource::InferredStrict => "inferred_strict",
        }
    }

    pub fn parse(s: &str) -> Option<TradeSource> {
        match s {
            "onchain" => Some(TradeSource::Onchain),
            "inferred_loose" | "loose" => Some(TradeSource::InferredLoose),
            "inferred_strict" | "strict" => Some(TradeSource::InferredStrict),
            _ => None,
        }
    }
}

impl fmt::Display for TradeSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignedTrade {
    pub market_id: Arc<str>,
    pub token_id: Arc<str>,
    /// Unix seconds.
    pub ts: f64,
    pub price: f64,
    pub usdc_micro: u64,
    pub token_micro: u64,
    pub sign: Sign,
    pub maker: Option<Arc<str>>,
    pub taker: Option<Arc<str>>,
    pub source: TradeSource,
    pub block_number: Option<u64>,
    /// Index of the feed event that produced an inferred trade.
    pub event_index: Option<u64>,
    /// Side of the book that was decremented, for inferred trades.
    pub level_side: Option<Side>,
}

impl SignedTrade {
    pub fn size_usdc(&self) -> f64 {
        self.usdc_micro as f64 / BASE_UNITS as f64
    }

    pub fn size_tokens(&self) -> f64 {
        self.token_micro as f64 / BASE_UNITS as f64
    }

    /// Price rounded to the nearest tick.
    pub fn tick(&self) -> Option<Tick> {
        Tick::new((self.price * TICKS_PER_UNIT as f64).round() as u32)
    }

    /// `sign * usdc_micro` as a signed integer.
    pub fn signed_usdc_micro(&self) -> i128 {
        self.sign.as_i64() as i128 * self.usdc_micro as i128
    }

    pub fn with_sign(&self, sign: Sign) -> SignedTrade {
        SignedTrade {
            sign,
            ..self.clone()
        }
    }
}

/// Groups trades by market id, preserving order within each market.
pub fn by_market(trades: &[SignedTrade]) -> BTreeMap<Arc<str>, Vec<&SignedTrade>> {
    let mut out: BTreeMap<Arc<str>, Vec<&SignedTrade>> = BTreeMap::new();
    for t in trades {
        out.entry(t.market_id.clone()).or_default().push(t);
    }
    out
}

pub fn trades_table(trades: &[SignedTrade]) -> Table {
    let s = |f: &dyn Fn(&SignedTrade) -> Option<String>| Column::Str(trades.iter().map(f).collect());
    let i = |f: &dyn Fn(&SignedTrade) -> Option<i64>| Column::I64(trades.iter().map(f).collect());
    let mut t = Table::new()
        .with("market_id", s(&|t| Some(t.market_id.to_string())))
        .with("token_id", s(&|t| Some(t.token_id.to_string())))
        .with("ts", Column::F64(trades.iter().map(|t| Some(t.ts)).collect()))
        .with("price", Column::F64(trades.iter().map(|t| Some(t.price)).collect()))
        .with("size_usdc", Column::F64(trades.iter().map(|t| Some(t.size_usdc())).collect()))
        .with("usdc_micro", i(&|t| Some(t.usdc_micro as i64)))
        .with("token_micro", i(&|t| Some(t.token_micro as i64)))
        .with("sign", i(&|t| Some(t.sign.as_i64())))
        .with("maker", s(&|t| t.maker.as_deref().map(str::to_string)))
        .with("taker", s(&|t| t.taker.as_deref().map(str::to_string)))
        .with("source", s(&|t| Some(t.source.as_str().to_string())))
        .with("block_number", i(&|t| t.block_number.map(|b| b as i64)))
        .with("event_index", i(&|t| t.event_index.map(|b| b as i64)))
        .with("level_side", s(&|t| t.level_side.map(|s| s.as_str().to_string())));
    t.set_metadata("schema", "signed_trade.v1");
    t
}

#[derive(Debug, thiserror::Error)]
pub enum TradeTableError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("row {row}: bad `{column}`")]
    BadValue { row: usize, column: &'static str },
}

pub fn table_trades(t: &Table) -> Result<Vec<SignedTrade>, TradeTableError> {
    let market = t.strs("market_id")?;
    let token = t.strs("token_id")?;
    let ts = t.f64s("ts")?;
    let price = t.f64s("price")?;
    let usdc = t.i64s("usdc_micro")?;
    let tok = t.i64s("token_micro")?;
    let sign = t.i64s("sign")?;
    let maker = t.strs("maker")?;
    let taker = t.strs("taker")?;
    let source = t.strs("source")?;
    let block = t.i64s("block_number")?;
    let event = t.i64s("event_index")?;
    let side = t.strs("level_side")?;
    let mut interned: BTreeMap<String, Arc<str>> = BTreeMap::new();
    let mut intern = |s: &str| -> Arc<str> {
        if let Some(a) = interned.get(s) {
            return a.clone();
        }
        let a: Arc<str> = Arc::from(s);
        interned.insert(s.to_string(), a.clone());
        a
    };
    let mut out = Vec::with_capacity(t.num_rows());
    for r in 0..t.num_rows() {
        let bad = |column| TradeTableError::BadValue { row: r, column };
        out.push(SignedTrade {
            market_id: intern(market[r].as_deref().ok_or_else(|| bad("market_id"))?),
            token_id: intern(token[r].as_deref().ok_or_else(|| bad("token_id"))?),
            ts: ts[r].ok_or_else(|| bad("ts"))?,
            price: price[r].ok_or_else(|| bad("price"))?,
            usdc_micro: usdc[r].ok_or_else(|| bad("usdc_micro"))? as u64,
            token_micro: tok[r].ok_or_else(|| bad("token_micro"))? as u64,
            sign: sign[r].and_then(Sign::from_i64).ok_or_else(|| bad("sign"))?,
            maker: maker[r].as_deref().map(&mut intern),
            taker: taker[r].as_deref().map(&mut intern),
            source: source[r]
                .as_deref()
                .and_then(TradeSource::parse)
                .ok_or_else(|| bad("source"))?,
            block_number: block[r].map(|b| b as u64),
            event_index: event[r].map(|b| b as u64),
            level_side: match side[r].as_deref() {
                None => None,
                Some(s) => Some(Side::parse(s).ok_or_else(|| bad("level_side"))?),
            },
        });
    }
    Ok(out)
}

pub fn write_trades(path: &Path, trades: &[SignedTrade]) -> Result<(), TableError> {
    trades_table(trades).write_parquet(path)
}

pub fn read_trades(path: &Path) -> Result<Vec<SignedTrade>, TradeTableError> {
    table_trades(&Table::read_parquet(path)?)
}
