//! Market metadata: condition id to YES/NO token ids, question text, end date
//! and closed flag. Kept in a JSON cache so builds run offline.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarketMeta {
    pub condition_id: String,
    pub yes_token_id: String,
    pub no_token_id: String,
    pub question: String,
    pub end_date_iso: Option<String>,
    pub closed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Yes,
    No,
}

#[derive(Debug, thiserror::Error)]
pub enum MetadataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed metadata: {0}")]
    Malformed(String),
    #[error("metadata fetch failed: {0}")]
    Fetch(String),
}

/// Token-id and condition-id index over a list of markets.
#[derive(Debug, Clone, Default)]
pub struct MetadataCache {
    markets: BTreeMap<String, MarketMeta>,
    by_token: HashMap<String, (String, Outcome)>,
}

impl MetadataCache {
    pub fn new(markets: impl IntoIterator<Item = MarketMeta>) -> Self {
        let mut c = MetadataCache::default();
        for m in markets {
            c.insert(m);
        }
        c
    }

    pub fn insert(&mut self, m: MarketMeta) {
        self.by_token
            .insert(m.yes_token_id.clone(), (m.condition_id.clone(), Outcome::Yes));
        self.by_token
            .insert(m.no_token_id.clone(), (m.condition_id.clone(), Outcome::No));
        self.markets.insert(m.condition_id.clone(), m);
    }

    pub fn len(&self) -> usize {
        self.markets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markets.is_empty()
    }

    pub fn market(&self, condition_id: &str) -> Option<&MarketMeta> {
        self.markets.get(condition_id)
    }

    pub fn markets(&self) -> impl Iterator<Item = &MarketMeta> {
        self.markets.values()
    }

    /// `(condition_id, outcome)` for a token id.
    pub fn resolve_token(&self, token_id: &str) -> Option<(&str, Outcome)> {
        self.by_token.get(token_id).map(|(c, o)| (c.as_str(), *o))
    }

    pub fn load(path: &Path) -> Result<Self, MetadataError> {
        let text = fs::read_to_string(path).map_err(|source| MetadataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let list: Vec<MarketMeta> =
            serde_json::from_str(&text).map_err(|e| MetadataError::Malformed(e.to_string()))?;
        Ok(Self::new(list))
    }

    /// Sorted by condition id, so the file is deterministic.
    pub fn save(&self, path: &Path) -> Result<(), MetadataError> {
        let list: Vec<&MarketMeta> = self.markets.values().collect();
        let text = serde_json::to_string_pretty(&list).expect("metadata serializes");
        crate::io::write_atomic(path, text.as_bytes()).map_err(|e| MetadataError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e.to_string()),
        })
    }
}

pub trait MetadataSource: Sync {
    fn fetch(&self, condition_id: &str) -> Result<MarketMeta, MetadataError>;
}

/// Venue REST client: `GET {base}/markets/{condition_id}`.
pub struct RestMetadata {
    base: String,
    agent: ureq::Agent,
}

impl RestMetadata {
    pub fn new(base: &str, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        RestMetadata {
            base: base.trim_end_matches('/').to_string(),
            agent,
        }
    }
}

impl MetadataSource for RestMetadata {
    fn fetch(&self, condition_id: &str) -> Result<MarketMeta, MetadataError> {
        let url = format!("{}/markets/{condition_id}", self.base);
        let v: Value = self
            .agent
            .get(&url)
            .call()
            .map_err(|e| MetadataError::Fetch(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| MetadataError::Fetch(e.to_string()))?;
        parse_market(&v)
    }
}

/// Parses a venue market object with a `tokens` array of `{token_id, outcome}`.
pub fn parse_market(v: &Value) -> Result<MarketMeta, MetadataError> {
    let bad = |m: &str| MetadataError::Malformed(m.to_string());
    let condition_id = v
        .get("condition_id")
        .and_then(Value::as_str)
        .ok_or_else(|| bad("missing condition_id"))?;
    let tokens = v
        .get("tokens")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing tokens"))?;
    let mut yes = None;
    let mut no = None;
    for t in tokens {
        let id = t.get("token_id").and_then(Value::as_str);
        match t.get("outcome").and_then(Value::as_str).map(str::to_ascii_lowercase).as_deref() {
            Some("yes") => yes = id,
            Some("no") => no = id,
            _ => {}
        }
    }
    Ok(MarketMeta {
        condition_id: condition_id.to_string(),
        yes_token_id: yes.ok_or_else(|| bad("no YES token"))?.to_string(),
        no_token_id: no.ok_or_else(|| bad("no NO token"))?.to_string(),
        question: v.get("question").and_then(Value::as_str).unwrap_or("").to_string(),
        end_date_iso: v.get("end_date_iso").and_then(Value::as_str).map(str::to_string),
        closed: v.get("closed").and_then(Value::as_bool).unwrap_or(false),
    })
}

/// Fills cache misses from `source`, at most `in_flight` requests at a time.
/// Returns the ids that could not be fetched.
pub fn fill_cache(
    cache: &mut MetadataCache,
    ids: &[String],
    source: &dyn MetadataSource,
    in_flight: usize,
) -> Vec<String> {
    use rayon::prelude::*;
    let missing: Vec<&String> = ids.iter().filter(|id| cache.market(id).is_none()).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(in_flight.max(1))
        .build()
        .expect("thread pool");
    let fetched: Vec<(String, Result<MarketMeta, MetadataError>)> = pool.install(|| {
        missing
            .par_iter()
            .map(|id| ((*id).clone(), source.fetch(id)))
            .collect()
    });
    let mut failed = Vec::new();
    for (id, r) in fetched {
        match r {
            Ok(m) => cache.insert(m),
            Err(e) => {
                tracing::warn!(market = %id, error = %e, "metadata miss");
                failed.push(id);
            }
        }
    }
    failed
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn meta(c: &str) -> MarketMeta {
        MarketMeta {
            condition_id: c.into(),
            yes_token_id: format!("{c}-y"),
            no_token_id: format!("{c}-n"),
            question: "Will it?".into(),
            end_date_iso: Some("2026-04-01T00:00:00Z".into()),
            closed: false,
        }
    }

    #[test]
    fn resolves_tokens_and_round_trips() {
        let c = MetadataCache::new([meta("0xb"), meta("0xa")]);
        assert_eq!(c.resolve_token("0xa-n"), Some(("0xa", Outcome::No)));
        assert_eq!(c.resolve_token("zzz"), None);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("meta.json");
        c.save(&p).unwrap();
        let back = MetadataCache::load(&p).unwrap();
        assert_eq!(back.markets().cloned().collect::<Vec<_>>(), c.markets().cloned().collect::<Vec<_>>());
    }

    #[test]
    fn parses_venue_market() {
        let v = json!({
            "condition_id": "0xc", "question": "Q", "end_date_iso": "2026-03-20T00:00:00Z", "closed": true,
            "tokens": [{"token_id": "2", "outcome": "No"}, {"token_id": "1", "outcome": "Yes"}]
        });
        let m = parse_market(&v).unwrap();
        assert_eq!((m.yes_token_id.as_str(), m.no_token_id.as_str(), m.closed), ("1", "2", true));
        assert!(parse_market(&json!({"condition_id": "x", "tokens": []})).is_err());
    }

    struct Fake;
    impl MetadataSource for Fake {
        fn fetch(&self, id: &str) -> Result<MarketMeta, MetadataError> {
            if id.starts_with("bad") {
                Err(MetadataError::Fetch("404".into()))
            } else {
                Ok(meta(id))
            }
        }
    }

    #[test]
    fn fill_reports_misses() {
        let mut c = MetadataCache::default();
        let failed = fill_cache(&mut c, &["a".into(), "bad1".into(), "b".into()], &Fake, 2);
        assert_eq!(failed, vec!["bad1".to_string()]);
        assert_eq!(c.len(), 2);
    }
}
