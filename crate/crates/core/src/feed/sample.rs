//! Grid sampling of reconstructed books.
//!
//! Events are applied in arrival order. Grid point `g` is recorded before the
//! first event with `ts_received > g` is applied, so the sample at `g`
//! reflects every event stamped at or before `g`.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::book::{BookError, OrderBookState};
use super::event::BookEvent;
use crate::io::{Column, Table};
use crate::units::Side;

/// Regular grid in milliseconds, `[start_ms, end_ms]` inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSpec {
    pub start_ms: i64,
    pub end_ms: i64,
    pub step_ms: i64,
}

impl GridSpec {
    /// Grid aligned to multiples of `step_ms` covering every received timestamp.
    pub fn covering(events: &[BookEvent], step_ms: i64) -> Option<GridSpec> {
        Self::covering_ts(events.iter().map(|e| e.ts_received), step_ms)
    }

    pub fn covering_ts(ts: impl Iterator<Item = i64> + Clone, step_ms: i64) -> Option<GridSpec> {
        assert!(step_ms > 0, "grid step must be positive");
        let lo = ts.clone().min()?;
        let hi = ts.max()?;
        Some(GridSpec {
            start_ms: lo.div_euclid(step_ms) * step_ms,
            end_ms: hi.div_euclid(step_ms) * step_ms + step_ms,
            step_ms,
        })
    }

    pub fn len(&self) -> usize {
        if self.end_ms < self.start_ms {
            0
        } else {
            ((self.end_ms - self.start_ms) / self.step_ms + 1) as usize
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, k: usize) -> i64 {
        self.start_ms + k as i64 * self.step_ms
    }

    /// Index of the last grid point at or before `ts_ms`.
    pub fn index_at_or_before(&self, ts_ms: i64) -> Option<usize> {
        if ts_ms < self.start_ms {
            return None;
        }
        let k = ((ts_ms - self.start_ms) / self.step_ms) as usize;
        (k < self.len()).then_some(k)
    }
}

/// High, low and close of the mid over one grid interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hlc {
    pub high: f64,
    pub low: f64,
    pub close: f64,
}

/// Mid prices on a grid; `None` marks a gap (one-sided, crossed or unseeded book).
#[derive(Clone, Debug, PartialEq)]
pub struct MidSeries {
    pub grid: GridSpec,
    pub mids: Vec<Option<f64>>,
    /// `hlc[k]` summarizes the mid path over `(g[k-1], g[k]]`, opened at `mids[k-1]`.
    pub hlc: Vec<Option<Hlc>>,
}

impl MidSeries {
    pub fn step_secs(&self) -> f64 {
        self.grid.step_ms as f64 / 1000.0
    }

    /// Mid at the last grid point at or before `ts_secs`.
    pub fn mid_at(&self, ts_secs: f64) -> Option<f64> {
        let k = self.grid.index_at_or_before(secs_to_ms(ts_secs))?;
        self.mids[k]
    }

    pub fn mid_at_index(&self, k: usize) -> Option<f64> {
        self.mids.get(k).copied().flatten()
    }

    pub fn index_at(&self, ts_secs: f64) -> Option<usize> {
        self.grid.index_at_or_before(secs_to_ms(ts_secs))
    }

    pub fn gap_count(&self) -> usize {
        self.mids.iter().filter(|m| m.is_none()).count()
    }
}

pub(crate) fn secs_to_ms(ts_secs: f64) -> i64 {
    (ts_secs * 1000.0).round() as i64
}

/// One book observation at a grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct BookSample {
    pub ts_ms: i64,
    pub mid: Option<f64>,
    pub best_bid: Option<f64>,
    pub best_ask: Option<f64>,
    pub half_spread_bps: Option<f64>,
    pub depth_bid_l1: f64,
    pub depth_ask_l1: f64,
    pub depth_bid_l10: f64,
    pub depth_ask_l10: f64,
    pub crossed: bool,
}

impl BookSample {
    fn of(book: &OrderBookState, ts_ms: i64) -> BookSample {
        let crossed = book.is_crossed();
        let depth = |side, l| book.cumulative_depth(side, l).as_f64();
        BookSample {
            ts_ms,
            mid: book.mid(),
            best_bid: book.best_bid().map(|t| t.as_prob()),
            best_ask: book.best_ask().map(|t| t.as_prob()),
            half_spread_bps: if crossed {
                None
            } else {
                book.quoted_half_spread_bps().ok()
            },
            depth_bid_l1: depth(Side::Bid, 1),
            depth_ask_l1: depth(Side::Ask, 1),
            depth_bid_l10: depth(Side::Bid, 10),
            depth_ask_l10: depth(Side::Ask, 10),
            crossed,
        }
    }

    /// Two-sided top-of-book depth.
    pub fn depth_l1(&self) -> f64 {
        self.depth_bid_l1 + self.depth_ask_l1
    }

    /// Two-sided cumulative top-10 depth.
    pub fn depth_l10(&self) -> f64 {
        self.depth_bid_l10 + self.depth_ask_l10
    }

    /// Usable for spread and depth statistics: both sides present, not crossed.
    pub fn is_clean(&self) -> bool {
        !self.crossed && self.mid.is_some()
    }
}

/// Everything recorded while replaying one book.
#[derive(Clone, Debug)]
pub struct SampledBook {
    pub market_id: Arc<str>,
    pub token_id: Arc<str>,
    pub series: MidSeries,
    pub samples: Vec<BookSample>,
    pub quarantined: usize,
    pub crossed_events: usize,
    pub suspect: bool,
}

/// Replays one book's events (arrival order) and records it on `grid`.
pub fn sample_book(events: &[&BookEvent], grid: GridSpec) -> Option<SampledBook> {
    let first = events.first()?;
    let mut book = OrderBookState::for_event(first);
    let n = grid.len();
    let mut mids = Vec::with_capacity(n);
    let mut hlc = Vec::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    let mut quarantined = 0;
    let mut crossed_events = 0;
    let mut running: Option<(f64, f64)> = None;

    let mut record = |k: usize, book: &OrderBookState, running: &mut Option<(f64, f64)>| {
        let s = BookSample::of(book, grid.point(k));
        let close = s.mid;
        mids.push(close);
        hlc.push(match (close, *running) {
            (Some(c), Some((h, l))) if k > 0 => Some(Hlc {
                high: h.max(c),
                low: l.min(c),
                close: c,
            }),
            (Some(c), None) if k > 0 => Some(Hlc {
                high: c,
                low: c,
                close: c,
            }),
            _ => None,
        });
        *running = close.map(|c| (c, c));
        samples.push(s);
    };

    let mut next = 0usize;
    for ev in events {
        while next < n && ev.ts_received > grid.point(next) {
            record(next, &book, &mut running);
            next += 1;
        }
        match book.apply(ev) {
            Ok(()) => {}
            Err(BookError::DeltaBeforeSnapshot(_)) => quarantined += 1,
            Err(BookError::CrossedBook { .. }) => crossed_events += 1,
            Err(e) => {
                tracing::warn!(error = %e, "event skipped");
                quarantined += 1;
            }
        }
        if let Some(m) = book.mid() {
            running = Some(match running {
                Some((h, l)) => (h.max(m), l.min(m)),
                None => (m, m),
            });
        }
    }
    while next < n {
        record(next, &book, &mut running);
        next += 1;
    }
    Some(SampledBook {
        market_id: first.market_id.clone(),
        token_id: first.token_id.clone(),
        series: MidSeries { grid, mids, hlc },
        samples,
        quarantined,
        crossed_events,
        suspect: book.is_suspect(),
    })
}

/// Splits a multi-book stream into per-(market, token) lanes, preserving arrival order.
pub fn route_books(events: &[BookEvent]) -> BTreeMap<(Arc<str>, Arc<str>), Vec<&BookEvent>> {
    let mut lanes: BTreeMap<(Arc<str>, Arc<str>), Vec<&BookEvent>> = BTreeMap::new();
    for ev in events {
        lanes
            .entry((ev.market_id.clone(), ev.token_id.clone()))
            .or_default()
            .push(ev);
    }
    lanes
}

/// Samples every book in a stream on a shared step. Each lane gets its own
/// grid covering its events unless `grid` is given.
pub fn sample_all(events: &[BookEvent], step_ms: i64, grid: Option<GridSpec>) -> Vec<SampledBook> {
    use rayon::prelude::*;
    let lanes: Vec<_> = route_books(events).into_iter().collect();
    lanes
        .par_iter()
        .filter_map(|(_, evs)| {
            let g = match grid {
                Some(g) => g,
                None => GridSpec::covering_ts(evs.iter().map(|e| e.ts_received), step_ms)?,
            };
            sample_book(evs, g)
        })
        .collect()
}

/// Columnar form of the samples of many books.
pub fn samples_table(books: &[SampledBook]) -> Table {
    let mut market = Vec::new();
    let mut token = Vec::new();
    let mut ts = Vec::new();
    let mut mid = Vec::new();
    let mut bid = Vec::new();
    let mut ask = Vec::new();
    let mut bps = Vec::new();
    let mut d1 = Vec::new();
    let mut d10 = Vec::new();
    let mut crossed = Vec::new();
    for b in books {
        for s in &b.samples {
            market.push(Some(b.market_id.to_string()));
            token.push(Some(b.token_id.to_string()));
            ts.push(Some(s.ts_ms));
            mid.push(s.mid);
            bid.push(s.best_bid);
            ask.push(s.best_ask);
            bps.push(s.half_spread_bps);
            d1.push(Some(s.depth_l1()));
            d10.push(Some(s.depth_l10()));
            crossed.push(Some(s.crossed));
        }
    }
    let mut t = Table::new()
        .with("market_id", Column::Str(market))
        .with("token_id", Column::Str(token))
        .with("ts_ms", Column::I64(ts))
        .with("mid", Column::F64(mid))
        .with("best_bid", Column::F64(bid))
        .with("best_ask", Column::F64(ask))
        .with("quoted_half_spread_bps", Column::F64(bps))
        .with("depth_l1", Column::F64(d1))
        .with("depth_l10", Column::F64(d10))
        .with("crossed", Column::Bool(crossed));
    t.set_metadata("depth_units", "tokens, both sides summed");
    t
}
