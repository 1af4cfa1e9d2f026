//! Exact price and quantity units shared by the feed and chain paths.
//!
//! Prices live on the venue's 0.001 probability grid and are stored as
//! integer thousandths, so that ladder keys and exact-price bucket matching
//! never compare floats. Token and USDC quantities are stored in 10⁻⁶ base
//! units, the scale both sides of an on-chain fill use.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Ticks per unit of probability.
pub const TICKS_PER_UNIT: u32 = 1_000;

/// Base units per whole token or per USDC.
pub const BASE_UNITS: u64 = 1_000_000;

/// A price on the 0.001 probability grid, strictly inside (0, 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Tick(u16);

impl Tick {
    pub const MIN: Tick = Tick(1);
    pub const MAX: Tick = Tick(999);

    pub fn new(milli: u32) -> Option<Tick> {
        (1..TICKS_PER_UNIT)
            .contains(&milli)
            .then_some(Tick(milli as u16))
    }

    pub fn milli(self) -> u32 {
        u32::from(self.0)
    }

    pub fn as_prob(self) -> f64 {
        f64::from(self.0) / f64::from(TICKS_PER_UNIT)
    }

    /// Nearest tick to a probability; `None` outside (0, 1) after rounding.
    pub fn from_prob(p: f64) -> Option<Tick> {
        if !p.is_finite() {
            return None;
        }
        let milli = (p * f64::from(TICKS_PER_UNIT)).round();
        if !(1.0..=999.0).contains(&milli) {
            return None;
        }
        Tick::new(milli as u32)
    }

    /// Parses a decimal price such as `"0.430"` or `".43"`; off-grid values are rejected.
    pub fn parse(s: &str) -> Option<Tick> {
        let milli = parse_fixed(s.trim(), 3)?;
        Tick::new(u32::try_from(milli).ok()?)
    }

    pub fn offset(self, delta: i32) -> Option<Tick> {
        let m = i64::from(self.0) + i64::from(delta);
        u32::try_from(m).ok().and_then(Tick::new)
    }
}

impl fmt::Display for Tick {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0.{:03}", self.0)
    }
}

/// A non-negative quantity in 10⁻⁶ base units.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Qty(u64);

impl Qty {
    pub const ZERO: Qty = Qty(0);

    pub const fn from_base(units: u64) -> Qty {
        Qty(units)
    }

    pub fn from_whole(tokens: u64) -> Qty {
        Qty(tokens * BASE_UNITS)
    }

    pub fn base(self) -> u64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / BASE_UNITS as f64
    }

    /// Parses a decimal quantity with at most six fractional digits.
    pub fn parse(s: &str) -> Option<Qty> {
        parse_fixed(s.trim(), 6).map(Qty)
    }

    /// USDC notional of this token quantity at `price`, in base units, rounded to nearest.
    pub fn notional(self, price: Tick) -> u64 {
        let num = u128::from(self.0) * u128::from(price.milli());
        ((num + u128::from(TICKS_PER_UNIT / 2)) / u128::from(TICKS_PER_UNIT)) as u64
    }

    pub fn saturating_sub(self, other: Qty) -> Qty {
        Qty(self.0.saturating_sub(other.0))
    }

    pub fn checked_add(self, other: Qty) -> Option<Qty> {
        self.0.checked_add(other.0).map(Qty)
    }
}

impl fmt::Display for Qty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / BASE_UNITS;
        let frac = self.0 % BASE_UNITS;
        if frac == 0 {
            write!(f, "{whole}")
        } else {
            let s = format!("{frac:06}");
            write!(f, "{whole}.{}", s.trim_end_matches('0'))
        }
    }
}

/// Book side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Bid,
    Ask,
}

impl Side {
    /// Accepts the venue spellings (`BUY`/`SELL`) as well as `bid`/`ask`.
    pub fn parse(s: &str) -> Option<Side> {
        match s.to_ascii_lowercase().as_str() {
            "bid" | "bids" | "buy" => Some(Side::Bid),
            "ask" | "asks" | "sell" => Some(Side::Ask),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Bid => "bid",
            Side::Ask => "ask",
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Bid => Side::Ask,
            Side::Ask => Side::Bid,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Aggressor sign of a trade.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Buy,
    Sell,
}

impl Sign {
    /// A resting-size decrement on the ask side means an offer was lifted.
    pub fn from_decremented_side(side: Side) -> Sign {
        match side {
            Side::Ask => Sign::Buy,
            Side::Bid => Sign::Sell,
        }
    }

    pub fn from_i64(v: i64) -> Option<Sign> {
        match v {
            1 => Some(Sign::Buy),
            -1 => Some(Sign::Sell),
            _ => None,
        }
    }

    pub fn as_i64(self) -> i64 {
        match self {
            Sign::Buy => 1,
            Sign::Sell => -1,
        }
    }

    pub fn as_f64(self) -> f64 {
        self.as_i64() as f64
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Buy => Sign::Sell,
            Sign::Sell => Sign::Buy,
        }
    }
}

/// Parses an unsigned decimal string into an integer scaled by `10^scale`.
/// Extra fractional digits are accepted only when they are zeros.
fn parse_fixed(s: &str, scale: u32) -> Option<u64> {
    if s.is_empty() {
        return None;
    }
    let (int_part, frac_part) = match s.split_once('.') {
        Some((i, f)) => (i, f),
        None => (s, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit())
    {
        return None;
    }
    let scale = scale as usize;
    let (kept, rest) = frac_part.split_at(frac_part.len().min(scale));
    if rest.bytes().any(|b| b != b'0') {
        return None;
    }
    let int: u64 = if int_part.is_empty() {
        0
    } else {
        int_part.parse().ok()?
    };
    let mut frac: u64 = if kept.is_empty() { 0 } else { kept.parse().ok()? };
    for _ in kept.len()..scale {
        frac *= 10;
    }
    int.checked_mul(10u64.pow(scale as u32))?.checked_add(frac)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tick_parses_grid_prices() {
        assert_eq!(Tick::parse("0.430").unwrap().milli(), 430);
        assert_eq!(Tick::parse("0.43").unwrap().milli(), 430);
        assert_eq!(Tick::parse(".5").unwrap().milli(), 500);
        assert_eq!(Tick::parse("0.4300").unwrap().milli(), 430);
        assert!(Tick::parse("0.4305").is_none());
        assert!(Tick::parse("1.000").is_none());
        assert!(Tick::parse("0").is_none());
        assert!(Tick::parse("-0.1").is_none());
        assert_eq!(Tick::new(430).unwrap().to_string(), "0.430");
    }

    #[test]
    fn qty_parse_and_display() {
        assert_eq!(Qty::parse("1500").unwrap(), Qty::from_whole(1500));
        assert_eq!(Qty::parse("0.25").unwrap().base(), 250_000);
        assert_eq!(Qty::parse("0").unwrap(), Qty::ZERO);
        assert!(Qty::parse("0.0000001").is_none());
        assert_eq!(Qty::from_base(1_250_000).to_string(), "1.25");
        assert_eq!(Qty::from_whole(7).to_string(), "7");
    }

    #[test]
    fn notional_is_exact_on_whole_tokens() {
        let q = Qty::from_whole(1000);
        assert_eq!(q.notional(Tick::new(520).unwrap()), 520 * BASE_UNITS);
    }

    #[test]
    fn side_spellings() {
        assert_eq!(Side::parse("BUY"), Some(Side::Bid));
        assert_eq!(Side::parse("sell"), Some(Side::Ask));
        assert_eq!(Side::parse("asks"), Some(Side::Ask));
        assert_eq!(Side::parse("mid"), None);
    }
}
