//! STRICT: touch-only decrements with cancel-replace suppression.
//!
//! A decrement is a trade candidate only when it hits the current best price
//! of its side. A candidate is dropped as a repost when, within `lookback`
//! events of the same book before or after it, the same side gains exactly
//! the decremented size at a different price. Each such increment explains at
//! most one decrement. Candidates are emitted once they leave the window.

use std::collections::VecDeque;

use super::{inferred_trade, InferenceRule};
use crate::feed::{BookEvent, BookUpdate, OrderBookState};
use crate::trade::{SignedTrade, TradeSource};
use crate::units::{Qty, Side, Tick};

pub const DEFAULT_LOOKBACK: usize = 256;

pub struct StrictRule {
    lookback: usize,
}

impl StrictRule {
    pub fn new(lookback: usize) -> Self {
        StrictRule { lookback }
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }
}

impl Default for StrictRule {
    fn default() -> Self {
        Self::new(DEFAULT_LOOKBACK)
    }
}

struct Increment {
    local: usize,
    side: Side,
    price: Tick,
    size: Qty,
    used: bool,
}

struct Candidate {
    local: usize,
    side: Side,
    price: Tick,
    size: Qty,
    suppressed: bool,
    trade: SignedTrade,
}

fn explains(side: Side, price: Tick, size: Qty, c_side: Side, c_price: Tick, c_size: Qty) -> bool {
    side == c_side && size == c_size && price != c_price
}

impl InferenceRule for StrictRule {
    fn name(&self) -> &'static str {
        "strict"
    }

    fn source(&self) -> TradeSource {
        TradeSource::InferredStrict
    }

    fn infer_book(&self, events: &[(u64, &BookEvent)]) -> Vec<SignedTrade> {
        let Some((_, first)) = events.first() else {
            return Vec::new();
        };
        let w = self.lookback;
        let mut book = OrderBookState::for_event(first);
        let mut history: VecDeque<Increment> = VecDeque::new();
        let mut pending: VecDeque<Candidate> = VecDeque::new();
        let mut out = Vec::new();

        for (j, &(index, ev)) in events.iter().enumerate() {
            while pending.front().is_some_and(|c| j - c.local > w) {
                let c = pending.pop_front().expect("non-empty");
                if !c.suppressed {
                    out.push(c.trade);
                }
            }
            while history.front().is_some_and(|h| j - h.local > w) {
                history.pop_front();
            }

            if let BookUpdate::Delta { side, level } = &ev.update {
                let (side, price, new) = (*side, level.price, level.size);
                if book.has_snapshot(side) {
                    let prior = book.level(side, price).unwrap_or(Qty::ZERO);
                    if new < prior && book.best(side) == Some(price) {
                        let size = prior.saturating_sub(new);
                        let repost = history
                            .iter_mut()
                            .rev()
                            .find(|h| !h.used && explains(h.side, h.price, h.size, side, price, size));
                        match repost {
                            Some(h) => h.used = true,
                            None => pending.push_back(Candidate {
                                local: j,
                                side,
                                price,
                                size,
                                suppressed: false,
                                trade: inferred_trade(ev, index, side, price, size, TradeSource::InferredStrict),
                            }),
                        }
                    } else if new > prior {
                        let size = new.saturating_sub(prior);
                        let explained = pending
                            .iter_mut()
                            .find(|c| !c.suppressed && explains(side, price, size, c.side, c.price, c.size));
                        match explained {
                            Some(c) => c.suppressed = true,
                            None => history.push_back(Increment {
                                local: j,
                                side,
                                price,
                                size,
                                used: false,
                            }),
                        }
                    }
                }
            }
            let _ = book.apply(ev);
        }
        out.extend(pending.into_iter().filter(|c| !c.suppressed).map(|c| c.trade));
        out.sort_by_key(|t| t.event_index);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::super::LooseRule;
    use super::*;
    use crate::feed::BookEvent;

    fn base() -> BookEvent {
        snap(&[(480, 500), (470, 300), (460, 200)], &[(520, 1000), (530, 100)])
    }

    #[test]
    fn best_ask_decrement_without_repost_is_a_trade() {
        let evs = vec![base(), delta(Side::Ask, 520, 600)];
        let t = StrictRule::default().infer_book(&indexed(&evs));
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].event_index, Some(1));
    }

    #[test]
    fn deep_decrement_is_ignored() {
        let evs = vec![base(), delta(Side::Bid, 460, 100)];
        assert!(StrictRule::default().infer_book(&indexed(&evs)).is_empty());
        assert_eq!(LooseRule.infer_book(&indexed(&evs)).len(), 1);
    }

    #[test]
    fn repost_after_decrement_suppresses() {
        let evs = vec![base(), delta(Side::Bid, 480, 0), delta(Side::Bid, 479, 500)];
        assert!(StrictRule::default().infer_book(&indexed(&evs)).is_empty());
        // different size: no suppression
        let evs = vec![base(), delta(Side::Bid, 480, 0), delta(Side::Bid, 479, 499)];
        assert_eq!(StrictRule::default().infer_book(&indexed(&evs)).len(), 1);
        // other side: no suppression
        let evs = vec![base(), delta(Side::Bid, 480, 0), delta(Side::Ask, 540, 500)];
        assert_eq!(StrictRule::default().infer_book(&indexed(&evs)).len(), 1);
    }

    #[test]
    fn repost_before_decrement_suppresses() {
        // increase of 500 at a deeper level, then the best level loses 500
        let evs = vec![base(), delta(Side::Bid, 470, 800), delta(Side::Bid, 480, 0)];
        assert!(StrictRule::default().infer_book(&indexed(&evs)).is_empty());
    }

    #[test]
    fn repost_outside_window_does_not_suppress() {
        let mut evs = vec![base(), delta(Side::Bid, 480, 0)];
        for k in 0..3 {
            evs.push(delta(Side::Ask, 600 + k, 1));
        }
        evs.push(delta(Side::Bid, 479, 500));
        assert_eq!(StrictRule::new(3).infer_book(&indexed(&evs)).len(), 1);
        assert!(StrictRule::new(4).infer_book(&indexed(&evs)).is_empty());
    }

    #[test]
    fn one_increment_explains_one_decrement() {
        let evs = vec![
            snap(&[(480, 500)], &[(520, 500), (530, 500)]),
            delta(Side::Ask, 520, 0),
            delta(Side::Ask, 530, 0),
            delta(Side::Ask, 540, 500),
        ];
        assert_eq!(StrictRule::default().infer_book(&indexed(&evs)).len(), 1);
    }
}
