//! Live market-channel WebSocket client.
//!
//! Subscribes to a set of asset ids and maps venue `book` and `price_change`
//! messages to [`BookEvent`]s in archive form. `ts_received` is the venue
//! timestamp, `ts_created` the local clock at receipt. Plain `ws://` works out
//! of the box; `wss://` needs the `tls` feature.

use std::net::TcpStream;
use std::sync::Arc;

use serde_json::{json, Map, Value};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

use super::event::{parse_ladder, qty_value, tick_value, ts_value, BookEvent, BookUpdate, FeedError, Level};
use crate::units::Side;

#[derive(Debug, thiserror::Error)]
pub enum LiveError {
    #[error("websocket: {0}")]
    Ws(#[from] tungstenite::Error),
    #[error(transparent)]
    Feed(#[from] FeedError),
    #[error("connection closed by peer")]
    Closed,
}

pub struct LiveClient {
    socket: WebSocket<MaybeTlsStream<TcpStream>>,
    /// Messages that failed to map; they are skipped.
    pub malformed: usize,
}

impl LiveClient {
    pub fn connect(url: &str, asset_ids: &[String]) -> Result<LiveClient, LiveError> {
        let (mut socket, _resp) = tungstenite::connect(url)?;
        let sub = json!({"assets_ids": asset_ids, "type": "market"}).to_string();
        socket.send(Message::Text(sub.into()))?;
        Ok(LiveClient {
            socket,
            malformed: 0,
        })
    }

    /// Blocks for the next data message and returns the events it carries
    /// (possibly none, for control frames or unrelated message types).
    pub fn next_events(&mut self) -> Result<Vec<BookEvent>, LiveError> {
        loop {
            let msg = self.socket.read()?;
            let text = match msg {
                Message::Text(t) => t.as_str().to_owned(),
                Message::Binary(b) => String::from_utf8_lossy(&b).into_owned(),
                Message::Close(_) => {
                    // completes the closing handshake
                    let _ = self.socket.flush();
                    return Err(LiveError::Closed);
                }
                _ => continue,
            };
            match venue_message_events(&text, now_ms()) {
                Ok(evs) => return Ok(evs),
                Err(e) => {
                    tracing::warn!(error = %e, "unmappable live message");
                    self.malformed += 1;
                }
            }
        }
    }

    /// Collects until `max_events` events are gathered or the peer closes.
    pub fn collect(&mut self, max_events: usize) -> Result<Vec<BookEvent>, LiveError> {
        let mut out = Vec::new();
        while out.len() < max_events {
            match self.next_events() {
                Ok(evs) => out.extend(evs),
                Err(LiveError::Closed) => break,
                Err(LiveError::Ws(tungstenite::Error::ConnectionClosed)) => break,
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }

    pub fn close(mut self) -> Result<(), LiveError> {
        self.socket.close(None)?;
        Ok(())
    }
}

fn now_ms() -> i64 {
    chrono::Utc::now().timestamp_millis()
}

/// Maps one venue message (an object or an array of objects) to book events.
pub fn venue_message_events(text: &str, now_ms: i64) -> Result<Vec<BookEvent>, FeedError> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| FeedError::MalformedPayload(format!("invalid json: {e}")))?;
    let mut out = Vec::new();
    match value {
        Value::Array(items) => {
            for item in &items {
                map_one(item, now_ms, &mut out)?;
            }
        }
        other => map_one(&other, now_ms, &mut out)?,
    }
    Ok(out)
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value, FeedError> {
    obj.get(key)
        .ok_or_else(|| FeedError::MalformedPayload(format!("missing field `{key}`")))
}

fn str_of<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a str, FeedError> {
    field(obj, key)?
        .as_str()
        .ok_or_else(|| FeedError::MalformedPayload(format!("field `{key}` is not a string")))
}

fn map_one(value: &Value, now_ms: i64, out: &mut Vec<BookEvent>) -> Result<(), FeedError> {
    let obj = value
        .as_object()
        .ok_or_else(|| FeedError::MalformedPayload("message is not an object".into()))?;
    let Some(kind) = obj.get("event_type").and_then(Value::as_str) else {
        return Ok(());
    };
    if !matches!(kind, "book" | "price_change") {
        return Ok(());
    }
    let market: Arc<str> = Arc::from(str_of(obj, "market")?);
    let ts = obj
        .get("timestamp")
        .and_then(ts_value)
        .ok_or_else(|| FeedError::MalformedPayload("missing venue timestamp".into()))?;
    match kind {
        "book" => {
            let bids = obj.get("bids").or_else(|| obj.get("buys"));
            let asks = obj.get("asks").or_else(|| obj.get("sells"));
            out.push(BookEvent {
                market_id: market,
                token_id: Arc::from(str_of(obj, "asset_id")?),
                update: BookUpdate::Snapshot {
                    bids: bids.map(parse_ladder).transpose()?,
                    asks: asks.map(parse_ladder).transpose()?,
                },
                ts_received: ts,
                ts_created: now_ms,
            });
        }
        "price_change" => {
            let changes = obj
                .get("price_changes")
                .or_else(|| obj.get("changes"))
                .and_then(Value::as_array)
                .ok_or_else(|| FeedError::MalformedPayload("price_change without changes".into()))?;
            for ch in changes {
                let c = ch
                    .as_object()
                    .ok_or_else(|| FeedError::MalformedPayload("change is not an object".into()))?;
                let token = match c.get("asset_id").and_then(Value::as_str) {
                    Some(t) => t,
                    None => str_of(obj, "asset_id")?,
                };
                let side_s = str_of(c, "side")?;
                let side = Side::parse(side_s)
                    .ok_or_else(|| FeedError::MalformedPayload(format!("unknown side `{side_s}`")))?;
                out.push(BookEvent {
                    market_id: market.clone(),
                    token_id: Arc::from(token),
                    update: BookUpdate::Delta {
                        side,
                        level: Level::new(tick_value(field(c, "price")?)?, qty_value(field(c, "size")?)?),
                    },
                    ts_received: ts,
                    ts_created: now_ms,
                });
            }
        }
        _ => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{Qty, Tick};
    use std::net::TcpListener;

    const BOOK: &str = r#"{"event_type":"book","market":"0xm","asset_id":"42",
        "bids":[{"price":"0.48","size":"30"},{"price":"0.49","size":"20"}],
        "asks":[{"price":"0.52","size":"25"}],"timestamp":"1700000000123"}"#;
    const CHANGE: &str = r#"{"event_type":"price_change","market":"0xm","timestamp":"1700000000200",
        "price_changes":[{"asset_id":"42","price":"0.5","size":"0","side":"BUY"},
                         {"asset_id":"43","price":"0.5","size":"10","side":"SELL"}]}"#;

    #[test]
    fn maps_book_and_changes() {
        let evs = venue_message_events(BOOK, 7).unwrap();
        assert_eq!(evs.len(), 1);
        assert_eq!(evs[0].ts_received, 1_700_000_000_123);
        assert_eq!(evs[0].ts_created, 7);
        let BookUpdate::Snapshot { bids: Some(b), .. } = &evs[0].update else {
            panic!("expected snapshot");
        };
        assert_eq!(b.len(), 2);

        let evs = venue_message_events(CHANGE, 7).unwrap();
        assert_eq!(evs.len(), 2);
        assert_eq!(&*evs[1].token_id, "43");
        assert_eq!(
            evs[0].update,
            BookUpdate::Delta {
                side: Side::Bid,
                level: Level::new(Tick::new(500).unwrap(), Qty::ZERO)
            }
        );
        assert!(venue_message_events(r#"{"event_type":"last_trade_price"}"#, 0)
            .unwrap()
            .is_empty());
        assert!(venue_message_events("[{", 0).is_err());
    }

    #[test]
    fn client_against_local_server() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut ws = tungstenite::accept(stream).unwrap();
            let sub = ws.read().unwrap();
            let sub: Value = serde_json::from_str(sub.to_text().unwrap()).unwrap();
            assert_eq!(sub["type"], "market");
            assert_eq!(sub["assets_ids"][0], "42");
            ws.send(Message::Text(BOOK.into())).unwrap();
            ws.send(Message::Text("not json".into())).unwrap();
            ws.send(Message::Text(format!("[{CHANGE}]").into())).unwrap();
            ws.close(None).unwrap();
            while ws.read().is_ok() {}
        });
        let mut client = LiveClient::connect(&format!("ws://{addr}"), &["42".to_string()]).unwrap();
        let evs = client.collect(100).unwrap();
        assert_eq!(evs.len(), 3);
        assert_eq!(client.malformed, 1);
        drop(client);
        server.join().unwrap();
    }
}
