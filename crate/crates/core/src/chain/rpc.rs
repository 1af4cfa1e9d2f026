//! Log sources: the `eth_getLogs` JSON-RPC client and the trait the scraper
//! consumes.

use std::time::Duration;

use primitive_types::{H160, H256};
use serde_json::{json, Value};

use super::fill::{h160_hex, h256_hex, parse_h160, parse_h256, parse_hex_bytes, parse_hex_u64, RawLog};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RpcError {
    #[error("provider rejected the block range as too large")]
    ChunkTooLarge,
    #[error("rpc error {code}: {message}")]
    Rpc { code: i64, message: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    BadResponse(String),
}

impl RpcError {
    /// Worth retrying with the same request.
    pub fn is_transient(&self) -> bool {
        matches!(self, RpcError::Transport(_))
    }
}

pub trait LogSource: Sync {
    fn head_block(&self) -> Result<u64, RpcError>;
    /// Logs in `[from, to]` inclusive emitted by `address` with `topic0`.
    fn get_logs(&self, from: u64, to: u64, address: H160, topic0: H256) -> Result<Vec<RawLog>, RpcError>;
}

/// Provider messages that signal an oversized range or result set.
fn is_range_rejection(code: i64, message: &str) -> bool {
    let m = message.to_ascii_lowercase();
    code == -32005
        || [
            "block range",
            "range too large",
            "too many",
            "more than",
            "limit exceeded",
            "response size",
            "query timeout",
        ]
        .iter()
        .any(|p| m.contains(p))
}

pub struct HttpRpc {
    url: String,
    agent: ureq::Agent,
}

impl HttpRpc {
    pub fn new(url: &str, timeout: Duration) -> HttpRpc {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpRpc {
            url: url.to_string(),
            agent,
        }
    }

    fn call(&self, method: &str, params: Value) -> Result<Value, RpcError> {
        let body = json!({"jsonrpc": "2.0", "id": 1, "method": method, "params": params});
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(&body)
            .map_err(|e| RpcError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 413 {
            return Err(RpcError::ChunkTooLarge);
        }
        if status == 429 || status >= 500 {
            return Err(RpcError::Transport(format!("http status {status}")));
        }
        let v: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| RpcError::BadResponse(e.to_string()))?;
        if let Some(err) = v.get("error") {
            let code = err.get("code").and_then(Value::as_i64).unwrap_or(0);
            let message = err.get("message").and_then(Value::as_str).unwrap_or("").to_string();
            return Err(if is_range_rejection(code, &message) {
                RpcError::ChunkTooLarge
            } else if code == -32029 || message.to_ascii_lowercase().contains("rate limit") {
                RpcError::Transport(message)
            } else {
                RpcError::Rpc { code, message }
            });
        }
        v.get("result")
            .cloned()
            .ok_or_else(|| RpcError::BadResponse("missing result".into()))
    }
}

impl LogSource for HttpRpc {
    fn head_block(&self) -> Result<u64, RpcError> {
        let r = self.call("eth_blockNumber", json!([]))?;
        r.as_str()
            .and_then(parse_hex_u64)
            .ok_or_else(|| RpcError::BadResponse("eth_blockNumber result is not hex".into()))
    }

    fn get_logs(&self, from: u64, to: u64, address: H160, topic0: H256) -> Result<Vec<RawLog>, RpcError> {
        let filter = json!({
            "fromBlock": format!("0x{from:x}"),
            "toBlock": format!("0x{to:x}"),
            "address": h160_hex(&address),
            "topics": [h256_hex(&topic0)],
        });
        let r = self.call("eth_getLogs", json!([filter]))?;
        let arr = r
            .as_array()
            .ok_or_else(|| RpcError::BadResponse("eth_getLogs result is not an array".into()))?;
        arr.iter()
            .filter(|l| !l.get("removed").and_then(Value::as_bool).unwrap_or(false))
            .map(parse_log)
            .collect()
    }
}

/// Parses one log object in JSON-RPC form.
pub fn parse_log(v: &Value) -> Result<RawLog, RpcError> {
    let s = |k: &str| {
        v.get(k)
            .and_then(Value::as_str)
            .ok_or_else(|| RpcError::BadResponse(format!("log missing `{k}`")))
    };
    let bad = |k: &str| RpcError::BadResponse(format!("log field `{k}` is malformed"));
    let topics = v
        .get("topics")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("topics"))?
        .iter()
        .map(|t| t.as_str().and_then(parse_h256).ok_or_else(|| bad("topics")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RawLog {
        address: parse_h160(s("address")?).ok_or_else(|| bad("address"))?,
        topics,
        data: parse_hex_bytes(s("data")?).ok_or_else(|| bad("data"))?,
        block_number: parse_hex_u64(s("blockNumber")?).ok_or_else(|| bad("blockNumber"))?,
        tx_hash: parse_h256(s("transactionHash")?).ok_or_else(|| bad("transactionHash"))?,
        log_index: parse_hex_u64(s("logIndex")?).ok_or_else(|| bad("logIndex"))?,
    })
}

/// JSON-RPC form of a log; inverse of [`parse_log`].
pub fn log_json(log: &RawLog) -> Value {
    json!({
        "address": h160_hex(&log.address),
        "topics": log.topics.iter().map(h256_hex).collect::<Vec<_>>(),
        "data": format!("0x{}", hex::encode(&log.data)),
        "blockNumber": format!("0x{:x}", log.block_number),
        "transactionHash": h256_hex(&log.tx_hash),
        "logIndex": format!("0x{:x}", log.log_index),
        "removed": false,
    })
}
