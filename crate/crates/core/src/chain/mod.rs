//! Exchange fills from chain logs: decoding, timestamps, scraping, metadata.

pub mod fill;
pub mod metadata;
pub mod rpc;
pub mod scrape;
pub mod time;

use std::collections::HashMap;
use std::sync::Arc;

use primitive_types::{H160, U256};

pub use fill::{
    aggressor_sign, decode_order_filled, encode_order_filled, fill_amounts, fill_price_and_size, DecodeError,
    FillError, OnChainFill, RawLog, ORDER_FILLED_TOPIC,
};
pub use metadata::{MarketMeta, MetadataCache, Outcome};
pub use rpc::{HttpRpc, LogSource, RpcError};
pub use scrape::{read_fills_dir, scrape_fills, ChunkPolicy, ScrapeConfig, ScrapeError, ScrapeReport};
pub use time::{interpolate_block_ts, BlockAnchor};

use crate::trade::{SignedTrade, TradeSource};

/// Fills excluded from the trade stream, by reason.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DropTally {
    pub split_fills: usize,
    pub zero_amount: usize,
    pub price_out_of_range: usize,
    pub amount_overflow: usize,
    pub unresolved_token: usize,
    pub no_timestamp: usize,
}

impl DropTally {
    pub fn total(&self) -> usize {
        self.split_fills
            + self.zero_amount
            + self.price_out_of_range
            + self.amount_overflow
            + self.unresolved_token
            + self.no_timestamp
    }
}

/// Interned `(market_id, token_id)` of a token.
type Resolved = (Arc<str>, Arc<str>);

/// Admissible fills as on-chain trades. Both YES and NO tokens are kept.
pub fn fills_to_trades(fills: &[OnChainFill], cache: &MetadataCache) -> (Vec<SignedTrade>, DropTally) {
    let mut tally = DropTally::default();
    let mut out = Vec::with_capacity(fills.len());
    // token ids and addresses repeat heavily; format each distinct one once
    let mut tokens: HashMap<U256, Option<Resolved>> = HashMap::new();
    let mut wallets: HashMap<H160, Arc<str>> = HashMap::new();
    let mut wallet = |a: &H160| wallets.entry(*a).or_insert_with(|| Arc::from(fill::h160_hex(a))).clone();
    for f in fills {
        let amounts = match fill_amounts(f) {
            Ok(a) => a,
            Err(e) => {
                match e {
                    FillError::SplitFill => tally.split_fills += 1,
                    FillError::ZeroAmount => tally.zero_amount += 1,
                    FillError::PriceOutOfRange(_) => tally.price_out_of_range += 1,
                    FillError::AmountOverflow => tally.amount_overflow += 1,
                }
                continue;
            }
        };
        let token = fill::traded_token(f).expect("admissible fill");
        let resolved = tokens.entry(token).or_insert_with(|| {
            let id = token.to_string();
            let (market, _) = cache.resolve_token(&id)?;
            Some((Arc::from(market), Arc::from(id)))
        });
        let Some((market_id, token_id)) = resolved.clone() else {
            tally.unresolved_token += 1;
            continue;
        };
        let Some(ts) = f.block_ts else {
            tally.no_timestamp += 1;
            continue;
        };
        out.push(SignedTrade {
            market_id,
            token_id,
            ts,
            price: amounts.price(),
            usdc_micro: amounts.usdc_micro,
            token_micro: amounts.token_micro,
            sign: amounts.sign,
            maker: Some(wallet(&f.maker)),
            taker: Some(wallet(&f.taker)),
            source: TradeSource::Onchain,
            block_number: Some(f.block_number),
            event_index: None,
            level_side: None,
        });
    }
    (out, tally)
}

/// Assigns interpolated timestamps to fills lacking one.
pub fn assign_block_ts(fills: &mut [OnChainFill], anchor: BlockAnchor, secs_per_block: f64) {
    for f in fills.iter_mut().filter(|f| f.block_ts.is_none()) {
        f.block_ts = interpolate_block_ts(f.block_number, anchor, secs_per_block).ok();
    }
}
