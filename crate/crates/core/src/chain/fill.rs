//! `OrderFilled` logs: ABI layout, decoding, aggressor sign and price.
//!
//! Indexed topics are `(topic0, orderHash, maker, taker)`; the data section is
//! five 32-byte words `(makerAssetId, takerAssetId, makerAmountFilled,
//! takerAmountFilled, fee)`. Asset id 0 denotes USDC.

use primitive_types::{H160, H256, U256};

use crate::units::{Sign, Tick, TICKS_PER_UNIT};

/// keccak256("OrderFilled(bytes32,address,address,uint256,uint256,uint256,uint256,uint256)")
pub const ORDER_FILLED_TOPIC: &str = "0xd0a08e8c493f9c94f29311604c9de1b4e8c8d4c06bd0c789af57f2d65bfec0f6";

pub fn order_filled_topic() -> H256 {
    parse_h256(ORDER_FILLED_TOPIC).expect("valid topic constant")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("topic0 {0} is not OrderFilled")]
    TopicMismatch(String),
    #[error("malformed log data: {0}")]
    MalformedData(String),
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum FillError {
    #[error("split fill: neither side of the fill is USDC")]
    SplitFill,
    #[error("a fill amount is zero")]
    ZeroAmount,
    #[error("implied price {0} outside (0,1)")]
    PriceOutOfRange(f64),
    #[error("amount exceeds 64 bits")]
    AmountOverflow,
}

/// A log as returned by `eth_getLogs`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawLog {
    pub address: H160,
    pub topics: Vec<H256>,
    pub data: Vec<u8>,
    pub block_number: u64,
    pub tx_hash: H256,
    pub log_index: u64,
}

impl RawLog {
    pub fn key(&self) -> (H256, u64) {
        (self.tx_hash, self.log_index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnChainFill {
    pub tx_hash: H256,
    pub log_index: u64,
    pub order_hash: H256,
    pub maker: H160,
    pub taker: H160,
    pub maker_asset_id: U256,
    pub taker_asset_id: U256,
    pub maker_amount: U256,
    pub taker_amount: U256,
    pub fee: U256,
    pub block_number: u64,
    /// Interpolated wall-clock seconds, once assigned.
    pub block_ts: Option<f64>,
}

fn word_to_address(word: &H256) -> H160 {
    H160::from_slice(&word.as_bytes()[12..])
}

fn address_to_word(a: &H160) -> H256 {
    let mut w = [0u8; 32];
    w[12..].copy_from_slice(a.as_bytes());
    H256(w)
}

pub fn decode_order_filled(log: &RawLog) -> Result<OnChainFill, DecodeError> {
    let topic0 = log
        .topics
        .first()
        .ok_or_else(|| DecodeError::MalformedData("log has no topics".into()))?;
    if *topic0 != order_filled_topic() {
        return Err(DecodeError::TopicMismatch(h256_hex(topic0)));
    }
    if log.topics.len() != 4 {
        return Err(DecodeError::MalformedData(format!(
            "expected 4 topics, got {}",
            log.topics.len()
        )));
    }
    if !log.data.len().is_multiple_of(32) || log.data.len() < 5 * 32 {
        return Err(DecodeError::MalformedData(format!(
            "data length {} is not five 32-byte words",
            log.data.len()
        )));
    }
    let word = |i: usize| U256::from_big_endian(&log.data[i * 32..(i + 1) * 32]);
    for t in &log.topics[2..4] {
        if t.as_bytes()[..12].iter().any(|&b| b != 0) {
            return Err(DecodeError::MalformedData("address topic has dirty high bytes".into()));
        }
    }
    Ok(OnChainFill {
        tx_hash: log.tx_hash,
        log_index: log.log_index,
        order_hash: log.topics[1],
        maker: word_to_address(&log.topics[2]),
        taker: word_to_address(&log.topics[3]),
        maker_asset_id: word(0),
        taker_asset_id: word(1),
        maker_amount: word(2),
        taker_amount: word(3),
        fee: word(4),
        block_number: log.block_number,
        block_ts: None,
    })
}

pub fn encode_order_filled(fill: &OnChainFill, exchange: H160) -> RawLog {
    let mut data = Vec::with_capacity(5 * 32);
    for v in [
        fill.maker_asset_id,
        fill.taker_asset_id,
        fill.maker_amount,
        fill.taker_amount,
        fill.fee,
    ] {
        data.extend_from_slice(&v.to_big_endian());
    }
    RawLog {
        address: exchange,
        topics: vec![
            order_filled_topic(),
            fill.order_hash,
            address_to_word(&fill.maker),
            address_to_word(&fill.taker),
        ],
        data,
        block_number: fill.block_number,
        tx_hash: fill.tx_hash,
        log_index: fill.log_index,
    }
}

/// +1 when the taker paid USDC (bought), -1 when the maker did.
pub fn aggressor_sign(fill: &OnChainFill) -> Result<Sign, FillError> {
    match (fill.taker_asset_id.is_zero(), fill.maker_asset_id.is_zero()) {
        (true, false) => Ok(Sign::Buy),
        (false, true) => Ok(Sign::Sell),
        _ => Err(FillError::SplitFill),
    }
}

/// Amounts of a fill in base units, split by asset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FillAmounts {
    pub usdc_micro: u64,
    pub token_micro: u64,
    pub sign: Sign,
}

impl FillAmounts {
    pub fn price(&self) -> f64 {
        self.usdc_micro as f64 / self.token_micro as f64
    }

    pub fn size_usdc(&self) -> f64 {
        self.usdc_micro as f64 / 1e6
    }

    /// Price rounded to the nearest tick; `None` when it rounds outside the grid.
    pub fn tick(&self) -> Option<Tick> {
        let num = self.usdc_micro as u128 * TICKS_PER_UNIT as u128;
        let den = self.token_micro as u128;
        let milli = (2 * num + den) / (2 * den);
        u32::try_from(milli).ok().and_then(Tick::new)
    }
}

fn to_u64(v: U256) -> Result<u64, FillError> {
    if v.bits() > 64 {
        Err(FillError::AmountOverflow)
    } else {
        Ok(v.low_u64())
    }
}

pub fn fill_amounts(fill: &OnChainFill) -> Result<FillAmounts, FillError> {
    let sign = aggressor_sign(fill)?;
    let (usdc, token) = match sign {
        Sign::Buy => (fill.taker_amount, fill.maker_amount),
        Sign::Sell => (fill.maker_amount, fill.taker_amount),
    };
    let (usdc_micro, token_micro) = (to_u64(usdc)?, to_u64(token)?);
    if usdc_micro == 0 || token_micro == 0 {
        return Err(FillError::ZeroAmount);
    }
    let a = FillAmounts {
        usdc_micro,
        token_micro,
        sign,
    };
    let p = a.price();
    if !(p > 0.0 && p < 1.0) {
        return Err(FillError::PriceOutOfRange(p));
    }
    Ok(a)
}

/// `(price, size_usdc)` of an admissible fill.
pub fn fill_price_and_size(fill: &OnChainFill) -> Result<(f64, f64), FillError> {
    let a = fill_amounts(fill)?;
    Ok((a.price(), a.size_usdc()))
}

/// The conditional-token id traded in the fill (the non-USDC asset).
pub fn traded_token(fill: &OnChainFill) -> Result<U256, FillError> {
    match aggressor_sign(fill)? {
        Sign::Buy => Ok(fill.maker_asset_id),
        Sign::Sell => Ok(fill.taker_asset_id),
    }
}

pub fn h256_hex(h: &H256) -> String {
    format!("0x{}", hex::encode(h.as_bytes()))
}

pub fn h160_hex(a: &H160) -> String {
    format!("0x{}", hex::encode(a.as_bytes()))
}

fn strip0x(s: &str) -> &str {
    s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")).unwrap_or(s)
}

pub fn parse_h256(s: &str) -> Option<H256> {
    let b = hex::decode(strip0x(s)).ok()?;
    (b.len() == 32).then(|| H256::from_slice(&b))
}

pub fn parse_h160(s: &str) -> Option<H160> {
    let b = hex::decode(strip0x(s)).ok()?;
    (b.len() == 20).then(|| H160::from_slice(&b))
}

pub fn parse_hex_bytes(s: &str) -> Option<Vec<u8>> {
    hex::decode(strip0x(s)).ok()
}

pub fn parse_hex_u64(s: &str) -> Option<u64> {
    u64::from_str_radix(strip0x(s), 16).ok()
}
