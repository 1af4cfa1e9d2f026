//! LOOSE: every reduction of resting size at a tracked level is a trade.

use super::{inferred_trade, InferenceRule};
use crate::feed::{BookEvent, BookUpdate, OrderBookState};
use crate::trade::{SignedTrade, TradeSource};

pub struct LooseRule;

impl InferenceRule for LooseRule {
    fn name(&self) -> &'static str {
        "loose"
    }

    fn source(&self) -> TradeSource {
        TradeSource::InferredLoose
    }

    fn infer_book(&self, events: &[(u64, &BookEvent)]) -> Vec<SignedTrade> {
        let Some((_, first)) = events.first() else {
            return Vec::new();
        };
        let mut book = OrderBookState::for_event(first);
        let mut out = Vec::new();
        for &(i, ev) in events {
            if let BookUpdate::Delta { side, level } = &ev.update {
                if book.has_snapshot(*side) {
                    if let Some(prior) = book.level(*side, level.price) {
                        if level.size < prior {
                            out.push(inferred_trade(
                                ev,
                                i,
                                *side,
                                level.price,
                                prior.saturating_sub(level.size),
                                TradeSource::InferredLoose,
                            ));
                        }
                    }
                }
            }
            let _ = book.apply(ev);
        }
        out
    }
}
