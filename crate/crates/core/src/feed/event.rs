//! Typed feed events and their JSON envelope.
//!
//! An archive row (or a live message) carries `market_id`, `token_id`,
//! `event_type`, a `data` payload and two millisecond timestamps. The payload
//! is either a full one- or two-sided ladder (`book_snapshot`) or a single
//! `(change_price, change_side, change_size)` triple (`price_change`), where a
//! size of zero empties the level.

use std::sync::Arc;

use serde_json::{json, Map, Value};

use crate::units::{Qty, Side, Tick};

pub const SNAPSHOT_EVENT: &str = "book_snapshot";
pub const PRICE_CHANGE_EVENT: &str = "price_change";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FeedError {
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("unknown event type `{0}`")]
    UnknownEventType(String),
}

fn malformed(msg: impl Into<String>) -> FeedError {
    FeedError::MalformedPayload(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Level {
    pub price: Tick,
    pub size: Qty,
}

impl Level {
    pub fn new(price: Tick, size: Qty) -> Level {
        Level { price, size }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    Snapshot,
    PriceChange,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BookUpdate {
    /// Full ladder for the side(s) present; an absent side is left untouched.
    Snapshot {
        bids: Option<Vec<Level>>,
        asks: Option<Vec<Level>>,
    },
    /// Sets one level to `level.size`; zero removes it.
    Delta { side: Side, level: Level },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BookEvent {
    pub market_id: Arc<str>,
    pub token_id: Arc<str>,
    pub update: BookUpdate,
    /// Exchange wall clock, ms.
    pub ts_received: i64,
    /// Collector wall clock, ms.
    pub ts_created: i64,
}

impl BookEvent {
    pub fn kind(&self) -> EventKind {
        match self.update {
            BookUpdate::Snapshot { .. } => EventKind::Snapshot,
            BookUpdate::Delta { .. } => EventKind::PriceChange,
        }
    }

    pub fn event_type(&self) -> &'static str {
        match self.kind() {
            EventKind::Snapshot => SNAPSHOT_EVENT,
            EventKind::PriceChange => PRICE_CHANGE_EVENT,
        }
    }

    /// The payload in archive form.
    pub fn data_json(&self) -> String {
        let ladder = |levels: &[Level]| -> Value {
            Value::Array(
                levels
                    .iter()
                    .map(|l| json!([l.price.to_string(), l.size.to_string()]))
                    .collect(),
            )
        };
        let value = match &self.update {
            BookUpdate::Delta { side, level } => json!({
                "change_price": level.price.to_string(),
                "change_side": side.as_str(),
                "change_size": level.size.to_string(),
            }),
            BookUpdate::Snapshot {
                bids: Some(b),
                asks: None,
            } => json!({"side": "bid", "levels": ladder(b)}),
            BookUpdate::Snapshot {
                bids: None,
                asks: Some(a),
            } => json!({"side": "ask", "levels": ladder(a)}),
            BookUpdate::Snapshot { bids, asks } => {
                let mut m = Map::new();
                if let Some(b) = bids {
                    m.insert("bids".into(), ladder(b));
                }
                if let Some(a) = asks {
                    m.insert("asks".into(), ladder(a));
                }
                Value::Object(m)
            }
        };
        value.to_string()
    }

    /// The full envelope, as accepted by [`parse_feed_event`].
    pub fn to_envelope_json(&self) -> String {
        json!({
            "market_id": &*self.market_id,
            "token_id": &*self.token_id,
            "event_type": self.event_type(),
            "data": self.data_json(),
            "timestamp_received": self.ts_received,
            "timestamp_created_at": self.ts_created,
        })
        .to_string()
    }
}

/// Parses one JSON envelope.
pub fn parse_feed_event(raw: &[u8]) -> Result<BookEvent, FeedError> {
    let value: Value =
        serde_json::from_slice(raw).map_err(|e| malformed(format!("invalid json: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| malformed("envelope is not an object"))?;
    let market_id = str_field(obj, "market_id")?;
    let token_id = str_field(obj, "token_id")?;
    let event_type = str_field(obj, "event_type")?;
    let ts_received = ts_field(obj, "timestamp_received")?;
    let ts_created = ts_field(obj, "timestamp_created_at")?;
    let data = obj.get("data").ok_or_else(|| malformed("missing field `data`"))?;
    let update = match data {
        Value::String(s) => parse_data_str(event_type, s)?,
        other => parse_data(event_type, other)?,
    };
    Ok(BookEvent {
        market_id: Arc::from(market_id),
        token_id: Arc::from(token_id),
        update,
        ts_received,
        ts_created,
    })
}

/// Parses an archive `data` string for the given `event_type`.
pub fn parse_data_str(event_type: &str, data: &str) -> Result<BookUpdate, FeedError> {
    check_event_type(event_type)?;
    let value: Value =
        serde_json::from_str(data).map_err(|e| malformed(format!("invalid data json: {e}")))?;
    parse_data(event_type, &value)
}

fn check_event_type(event_type: &str) -> Result<(), FeedError> {
    match event_type {
        SNAPSHOT_EVENT | "book" | PRICE_CHANGE_EVENT => Ok(()),
        other => Err(FeedError::UnknownEventType(other.to_string())),
    }
}

fn parse_data(event_type: &str, data: &Value) -> Result<BookUpdate, FeedError> {
    check_event_type(event_type)?;
    let obj = data
        .as_object()
        .ok_or_else(|| malformed("data is not an object"))?;
    match event_type {
        PRICE_CHANGE_EVENT => {
            let price = tick_value(
                obj.get("change_price")
                    .ok_or_else(|| malformed("missing field `change_price`"))?,
            )?;
            let side_s = str_field(obj, "change_side")?;
            let side = Side::parse(side_s)
                .ok_or_else(|| malformed(format!("unknown side `{side_s}`")))?;
            let size = qty_value(
                obj.get("change_size")
                    .ok_or_else(|| malformed("missing field `change_size`"))?,
            )?;
            Ok(BookUpdate::Delta {
                side,
                level: Level::new(price, size),
            })
        }
        _ => {
            if let Some(levels) = obj.get("levels") {
                let side_s = str_field(obj, "side")?;
                let side = Side::parse(side_s)
                    .ok_or_else(|| malformed(format!("unknown side `{side_s}`")))?;
                let ladder = parse_ladder(levels)?;
                Ok(match side {
                    Side::Bid => BookUpdate::Snapshot {
                        bids: Some(ladder),
                        asks: None,
                    },
                    Side::Ask => BookUpdate::Snapshot {
                        bids: None,
                        asks: Some(ladder),
                    },
                })
            } else {
                let bids = obj.get("bids").map(parse_ladder).transpose()?;
                let asks = obj.get("asks").map(parse_ladder).transpose()?;
                if bids.is_none() && asks.is_none() {
                    return Err(malformed("snapshot carries no ladder"));
                }
                Ok(BookUpdate::Snapshot { bids, asks })
            }
        }
    }
}

pub(crate) fn parse_ladder(value: &Value) -> Result<Vec<Level>, FeedError> {
    let arr = value
        .as_array()
        .ok_or_else(|| malformed("ladder is not an array"))?;
    let mut out = Vec::with_capacity(arr.len());
    for entry in arr {
        let (p, s) = match entry {
            Value::Array(pair) if pair.len() == 2 => (&pair[0], &pair[1]),
            Value::Object(o) => (
                o.get("price").ok_or_else(|| malformed("level missing price"))?,
                o.get("size").ok_or_else(|| malformed("level missing size"))?,
            ),
            _ => return Err(malformed("level is neither [price, size] nor an object")),
        };
        out.push(Level::new(tick_value(p)?, qty_value(s)?));
    }
    let increasing = out.windows(2).all(|w| w[0].price < w[1].price);
    let decreasing = out.windows(2).all(|w| w[0].price > w[1].price);
    if !(increasing || decreasing) {
        return Err(malformed("snapshot ladder is not strictly monotone in price"));
    }
    Ok(out)
}

fn str_field<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a str, FeedError> {
    obj.get(key)
        .ok_or_else(|| malformed(format!("missing field `{key}`")))?
        .as_str()
        .ok_or_else(|| malformed(format!("field `{key}` is not a string")))
}

fn number_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

pub(crate) fn tick_value(v: &Value) -> Result<Tick, FeedError> {
    let text = number_text(v).ok_or_else(|| malformed("price is not a number"))?;
    Tick::parse(&text).ok_or_else(|| malformed(format!("price `{text}` not on the (0,1) tick grid")))
}

pub(crate) fn qty_value(v: &Value) -> Result<Qty, FeedError> {
    let text = number_text(v).ok_or_else(|| malformed("size is not a number"))?;
    Qty::parse(&text).ok_or_else(|| malformed(format!("size `{text}` is not a non-negative decimal")))
}

/// Millisecond timestamp from an integer, float or numeric string.
pub(crate) fn ts_value(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n
            .as_i64()
            .or_else(|| n.as_f64().filter(|f| f.is_finite()).map(|f| f.round() as i64)),
        Value::String(s) => s.trim().parse::<i64>().ok().or_else(|| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|f| f.is_finite())
                .map(|f| f.round() as i64)
        }),
        _ => None,
    }
}

fn ts_field(obj: &Map<String, Value>, key: &str) -> Result<i64, FeedError> {
    let v = obj
        .get(key)
        .ok_or_else(|| malformed(format!("missing field `{key}`")))?;
    ts_value(v).ok_or_else(|| malformed(format!("field `{key}` is not a finite timestamp")))
}
