//! Trade inference from the book feed alone.
//!
//! Rules implement [`InferenceRule`] and are looked up by name in an
//! [`InferenceRegistry`]. Each rule sees one book's events in arrival order,
//! tagged with their index in the full stream.

pub mod loose;
pub mod strict;

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::feed::BookEvent;
use crate::trade::{SignedTrade, TradeSource};
use crate::units::{Qty, Side, Sign, Tick};

pub use loose::LooseRule;
pub use strict::{StrictRule, DEFAULT_LOOKBACK};

pub trait InferenceRule: Send + Sync {
    fn name(&self) -> &'static str;
    fn source(&self) -> TradeSource;
    /// Trades inferred from one book's `(stream index, event)` sequence.
    fn infer_book(&self, events: &[(u64, &BookEvent)]) -> Vec<SignedTrade>;
}

#[derive(Default)]
pub struct InferenceRegistry {
    rules: BTreeMap<&'static str, Box<dyn InferenceRule>>,
}

impl InferenceRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// LOOSE and STRICT with the given STRICT lookback.
    pub fn with_defaults(lookback: usize) -> Self {
        let mut r = Self::new();
        r.register(Box::new(LooseRule));
        r.register(Box::new(StrictRule::new(lookback)));
        r
    }

    pub fn register(&mut self, rule: Box<dyn InferenceRule>) {
        self.rules.insert(rule.name(), rule);
    }

    pub fn get(&self, name: &str) -> Option<&dyn InferenceRule> {
        self.rules.get(name).map(|b| b.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.rules.keys().copied().collect()
    }
}

/// Runs `rule` over every book in a mixed stream, books in parallel. Output is
/// ordered by stream index.
pub fn infer_all(rule: &dyn InferenceRule, events: &[BookEvent]) -> Vec<SignedTrade> {
    let mut routed: BTreeMap<(&str, &str), Vec<(u64, &BookEvent)>> = BTreeMap::new();
    for (i, e) in events.iter().enumerate() {
        routed
            .entry((&e.market_id, &e.token_id))
            .or_default()
            .push((i as u64, e));
    }
    let lanes: Vec<Vec<(u64, &BookEvent)>> = routed.into_values().collect();
    let mut out: Vec<SignedTrade> = lanes
        .par_iter()
        .flat_map_iter(|lane| rule.infer_book(lane))
        .collect();
    out.sort_by_key(|t| t.event_index);
    out
}

pub(crate) fn inferred_trade(
    ev: &BookEvent,
    index: u64,
    side: Side,
    price: Tick,
    decrement: Qty,
    source: TradeSource,
) -> SignedTrade {
    SignedTrade {
        market_id: ev.market_id.clone(),
        token_id: ev.token_id.clone(),
        ts: ev.ts_received as f64 / 1000.0,
        price: price.as_prob(),
        usdc_micro: decrement.notional(price),
        token_micro: decrement.base(),
        sign: Sign::from_decremented_side(side),
        maker: None,
        taker: None,
        source,
        block_number: None,
        event_index: Some(index),
        level_side: Some(side),
    }
}

/// Precision and recall of inferred trades against per-event truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub emitted: usize,
    pub true_positives: usize,
    pub trade_events: usize,
    pub precision: f64,
    pub recall: f64,
}

/// `is_trade[i]` says whether stream event `i` was caused by a trade.
pub fn score(trades: &[SignedTrade], is_trade: &[bool]) -> Score {
    let tp = trades
        .iter()
        .filter(|t| t.event_index.is_some_and(|i| is_trade.get(i as usize).copied().unwrap_or(false)))
        .count();
    let positives = is_trade.iter().filter(|&&b| b).count();
    Score {
        emitted: trades.len(),
        true_positives: tp,
        trade_events: positives,
        precision: if trades.is_empty() { f64::NAN } else { tp as f64 / trades.len() as f64 },
        recall: if positives == 0 { f64::NAN } else { tp as f64 / positives as f64 },
    }
}
