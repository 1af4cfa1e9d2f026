//! Reconstructed L2 book for one (market, token).
//!
//! A snapshot replaces only the side(s) it carries. A delta sets one level and
//! removes it when the new size is zero. Best bid and best ask are maintained
//! incrementally; they are recomputed from the ladder only when the current
//! best level is removed or a side is replaced.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::event::{BookEvent, BookUpdate, Level};
use crate::units::{Qty, Side, Tick};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BookError {
    #[error("delta on the {0} side before any snapshot for it; event quarantined")]
    DeltaBeforeSnapshot(Side),
    #[error("crossed book: best bid {bid} >= best ask {ask}")]
    CrossedBook { bid: Tick, ask: Tick },
    #[error("one side of the book is empty")]
    EmptySide,
    #[error("event for {market}/{token} applied to a different book")]
    WrongBook { market: String, token: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OrderBookState {
    market_id: Arc<str>,
    token_id: Arc<str>,
    bids: BTreeMap<Tick, Qty>,
    asks: BTreeMap<Tick, Qty>,
    best_bid: Option<Tick>,
    best_ask: Option<Tick>,
    bid_seen: bool,
    ask_seen: bool,
    last_event_ts: Option<i64>,
    suspect: bool,
}

impl OrderBookState {
    pub fn new(market_id: Arc<str>, token_id: Arc<str>) -> Self {
        Self {
            market_id,
            token_id,
            bids: BTreeMap::new(),
            asks: BTreeMap::new(),
            best_bid: None,
            best_ask: None,
            bid_seen: false,
            ask_seen: false,
            last_event_ts: None,
            suspect: false,
        }
    }

    pub fn for_event(ev: &BookEvent) -> Self {
        Self::new(ev.market_id.clone(), ev.token_id.clone())
    }

    pub fn market_id(&self) -> &Arc<str> {
        &self.market_id
    }

    pub fn token_id(&self) -> &Arc<str> {
        &self.token_id
    }

    pub fn last_event_ts(&self) -> Option<i64> {
        self.last_event_ts
    }

    /// Set once any event has left the book crossed.
    pub fn is_suspect(&self) -> bool {
        self.suspect
    }

    pub fn has_snapshot(&self, side: Side) -> bool {
        match side {
            Side::Bid => self.bid_seen,
            Side::Ask => self.ask_seen,
        }
    }

    pub fn best_bid(&self) -> Option<Tick> {
        self.best_bid
    }

    pub fn best_ask(&self) -> Option<Tick> {
        self.best_ask
    }

    pub fn best(&self, side: Side) -> Option<Tick> {
        match side {
            Side::Bid => self.best_bid,
            Side::Ask => self.best_ask,
        }
    }

    pub fn is_crossed(&self) -> bool {
        matches!((self.best_bid, self.best_ask), (Some(b), Some(a)) if b >= a)
    }

    /// Mid price; `None` when one-sided or crossed.
    pub fn mid(&self) -> Option<f64> {
        match (self.best_bid, self.best_ask) {
            (Some(b), Some(a)) if b < a => Some((b.as_prob() + a.as_prob()) / 2.0),
            _ => None,
        }
    }

    pub fn level(&self, side: Side, price: Tick) -> Option<Qty> {
        self.ladder(side).get(&price).copied()
    }

    fn ladder(&self, side: Side) -> &BTreeMap<Tick, Qty> {
        match side {
            Side::Bid => &self.bids,
            Side::Ask => &self.asks,
        }
    }

    /// Levels on `side`, best first.
    pub fn levels(&self, side: Side) -> Box<dyn Iterator<Item = Level> + '_> {
        let map = |(p, s): (&Tick, &Qty)| Level::new(*p, *s);
        match side {
            Side::Bid => Box::new(self.bids.iter().rev().map(map)),
            Side::Ask => Box::new(self.asks.iter().map(map)),
        }
    }

    pub fn depth_levels(&self, side: Side) -> usize {
        self.ladder(side).len()
    }

    /// Sum of sizes over the `levels` best prices on `side`.
    pub fn cumulative_depth(&self, side: Side, levels: usize) -> Qty {
        Qty::from_base(self.levels(side).take(levels).map(|l| l.size.base()).sum())
    }

    /// Half the quoted spread in basis points of mid.
    pub fn quoted_half_spread_bps(&self) -> Result<f64, BookError> {
        match (self.best_bid, self.best_ask) {
            (Some(b), Some(a)) => {
                let (b, a) = (b.as_prob(), a.as_prob());
                let mid = (a + b) / 2.0;
                Ok((a - b) / 2.0 / mid * 10_000.0)
            }
            _ => Err(BookError::EmptySide),
        }
    }

    /// Applies one event in arrival order.
    ///
    /// A delta on a side that has never been snapshotted is rejected without
    /// touching the state. A crossing is reported as an error *after* the
    /// state has been updated, and marks the book suspect.
    pub fn apply(&mut self, ev: &BookEvent) -> Result<(), BookError> {
        if ev.market_id != self.market_id || ev.token_id != self.token_id {
            return Err(BookError::WrongBook {
                market: ev.market_id.to_string(),
                token: ev.token_id.to_string(),
            });
        }
        match &ev.update {
            BookUpdate::Snapshot { bids, asks } => {
                if let Some(levels) = bids {
                    self.replace_side(Side::Bid, levels);
                }
                if let Some(levels) = asks {
                    self.replace_side(Side::Ask, levels);
                }
            }
            BookUpdate::Delta { side, level } => {
                if !self.has_snapshot(*side) {
                    return Err(BookError::DeltaBeforeSnapshot(*side));
                }
                self.set_level(*side, level.price, level.size);
            }
        }
        self.last_event_ts = Some(ev.ts_received);
        match (self.best_bid, self.best_ask) {
            (Some(bid), Some(ask)) if bid >= ask => {
                self.suspect = true;
                Err(BookError::CrossedBook { bid, ask })
            }
            _ => Ok(()),
        }
    }

    fn replace_side(&mut self, side: Side, levels: &[Level]) {
        let map: BTreeMap<Tick, Qty> = levels
            .iter()
            .filter(|l| !l.size.is_zero())
            .map(|l| (l.price, l.size))
            .collect();
        match side {
            Side::Bid => {
                self.best_bid = map.keys().next_back().copied();
                self.bids = map;
                self.bid_seen = true;
            }
            Side::Ask => {
                self.best_ask = map.keys().next().copied();
                self.asks = map;
                self.ask_seen = true;
            }
        }
    }

    fn set_level(&mut self, side: Side, price: Tick, size: Qty) {
        let (map, best) = match side {
            Side::Bid => (&mut self.bids, &mut self.best_bid),
            Side::Ask => (&mut self.asks, &mut self.best_ask),
        };
        if size.is_zero() {
            if map.remove(&price).is_some() && *best == Some(price) {
                *best = match side {
                    Side::Bid => map.keys().next_back().copied(),
                    Side::Ask => map.keys().next().copied(),
                };
            }
        } else {
            map.insert(price, size);
            let improves = match (side, *best) {
                (_, None) => true,
                (Side::Bid, Some(b)) => price > b,
                (Side::Ask, Some(a)) => price < a,
            };
            if improves {
                *best = Some(price);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(m: u32) -> Tick {
        Tick::new(m).unwrap()
    }

    fn ev(update: BookUpdate) -> BookEvent {
        BookEvent {
            market_id: Arc::from("m"),
            token_id: Arc::from("t"),
            update,
            ts_received: 0,
            ts_created: 0,
        }
    }

    fn snap(side: Side, levels: &[(u32, u64)]) -> BookEvent {
        let ladder: Vec<Level> = levels
            .iter()
            .map(|&(p, s)| Level::new(t(p), Qty::from_whole(s)))
            .collect();
        ev(match side {
            Side::Bid => BookUpdate::Snapshot {
                bids: Some(ladder),
                asks: None,
            },
            Side::Ask => BookUpdate::Snapshot {
                bids: None,
                asks: Some(ladder),
            },
        })
    }

    fn delta(side: Side, p: u32, s: u64) -> BookEvent {
        ev(BookUpdate::Delta {
            side,
            level: Level::new(t(p), Qty::from_whole(s)),
        })
    }

    fn book() -> OrderBookState {
        OrderBookState::new(Arc::from("m"), Arc::from("t"))
    }

    #[test]
    fn delta_inserts_into_empty_snapshotted_ladder() {
        let mut b = book();
        b.apply(&snap(Side::Bid, &[])).unwrap();
        b.apply(&delta(Side::Bid, 480, 1500)).unwrap();
        assert_eq!(b.level(Side::Bid, t(480)), Some(Qty::from_whole(1500)));
        assert_eq!(b.best_bid(), Some(t(480)));
    }

    #[test]
    fn zero_delta_removes_level() {
        let mut b = book();
        b.apply(&snap(Side::Ask, &[(520, 900), (530, 100)])).unwrap();
        b.apply(&delta(Side::Ask, 520, 0)).unwrap();
        assert_eq!(b.level(Side::Ask, t(520)), None);
        assert_eq!(b.best_ask(), Some(t(530)));
    }

    #[test]
    fn delta_before_snapshot_is_quarantined() {
        let mut b = book();
        let before = b.clone();
        assert_eq!(
            b.apply(&delta(Side::Bid, 480, 1)),
            Err(BookError::DeltaBeforeSnapshot(Side::Bid))
        );
        assert_eq!(b, before);
        // a snapshot of the other side does not unlock this one
        b.apply(&snap(Side::Ask, &[(520, 1)])).unwrap();
        assert!(b.apply(&delta(Side::Bid, 480, 1)).is_err());
    }

    #[test]
    fn crossing_updates_state_and_flags() {
        let mut b = book();
        b.apply(&snap(Side::Bid, &[(480, 1)])).unwrap();
        b.apply(&snap(Side::Ask, &[(520, 1)])).unwrap();
        let err = b.apply(&delta(Side::Bid, 530, 5)).unwrap_err();
        assert_eq!(
            err,
            BookError::CrossedBook {
                bid: t(530),
                ask: t(520)
            }
        );
        assert_eq!(b.best_bid(), Some(t(530)));
        assert!(b.is_suspect());
        assert!(b.mid().is_none());
    }

    #[test]
    fn snapshot_replaces_only_its_side() {
        let mut b = book();
        b.apply(&snap(Side::Bid, &[(480, 1), (470, 2)])).unwrap();
        b.apply(&snap(Side::Ask, &[(520, 1)])).unwrap();
        b.apply(&snap(Side::Bid, &[(450, 3)])).unwrap();
        assert_eq!(b.depth_levels(Side::Bid), 1);
        assert_eq!(b.best_bid(), Some(t(450)));
        assert_eq!(b.best_ask(), Some(t(520)));
    }

    #[test]
    fn snapshot_is_idempotent() {
        let s = snap(Side::Ask, &[(520, 1), (530, 2)]);
        let mut once = book();
        once.apply(&s).unwrap();
        let mut twice = once.clone();
        twice.apply(&s).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn half_spread_bps() {
        let mut b = book();
        b.apply(&snap(Side::Bid, &[(490, 1)])).unwrap();
        b.apply(&snap(Side::Ask, &[(510, 1)])).unwrap();
        assert!((b.quoted_half_spread_bps().unwrap() - 200.0).abs() < 1e-9);

        let mut c = book();
        c.apply(&snap(Side::Bid, &[(500, 1)])).unwrap();
        c.apply(&snap(Side::Ask, &[(501, 1)])).unwrap();
        // ((0.501 - 0.500) / 2) / 0.5005 * 1e4
        let expected = 0.0005 / 0.5005 * 10_000.0;
        assert!((c.quoted_half_spread_bps().unwrap() - expected).abs() < 1e-9);
        assert!((expected - 9.99).abs() < 0.01);

        let mut d = book();
        d.apply(&snap(Side::Bid, &[(490, 1)])).unwrap();
        assert_eq!(d.quoted_half_spread_bps(), Err(BookError::EmptySide));
    }

    #[test]
    fn cumulative_depth_cases() {
        let mut b = book();
        let levels: Vec<(u32, u64)> = (0..10).map(|i| (500 - i, 7)).collect();
        b.apply(&snap(Side::Bid, &levels)).unwrap();
        assert_eq!(b.cumulative_depth(Side::Bid, 10), Qty::from_whole(70));
        assert_eq!(b.cumulative_depth(Side::Bid, 1), Qty::from_whole(7));
        assert_eq!(b.cumulative_depth(Side::Bid, 50), Qty::from_whole(70));

        let mut top = book();
        top.apply(&snap(Side::Ask, &[(510, 9)])).unwrap();
        assert_eq!(
            top.cumulative_depth(Side::Ask, 1),
            top.cumulative_depth(Side::Ask, 10)
        );
        assert_eq!(top.cumulative_depth(Side::Bid, 10), Qty::ZERO);
    }
}
