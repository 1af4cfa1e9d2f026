//! Stratified market panel: the top markets by on-chain volume plus a seeded
//! uniform sample of the remaining markets with enough trades.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{MarketMeta, MetadataCache};
use crate::io::{sha256_hex, Column, Table};
use crate::stats::rng::derive_seed;
use crate::trade::SignedTrade;

/// Name of the sampling algorithm; bump it if the draw procedure changes.
pub const RNG_ALGORITHM: &str = "chacha20-fisher-yates-v1";
pub const DEFAULT_SEED: u64 = 20260424;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PanelSpec {
    pub top_n: usize,
    pub random_n: usize,
    pub min_trades: u64,
    pub seed: u64,
    /// Unix seconds, half-open.
    pub window: (i64, i64),
}

impl Default for PanelSpec {
    fn default() -> Self {
        PanelSpec {
            top_n: 100,
            random_n: 500,
            min_trades: 100,
            seed: DEFAULT_SEED,
            window: (0, i64::MAX),
        }
    }
}

impl PanelSpec {
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("spec serializes").as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PanelError {
    #[error("{eligible} eligible markets outside the top stratum, {needed} needed")]
    InsufficientEligible { eligible: usize, needed: usize },
    #[error("{available} resolvable markets, top stratum needs {needed}")]
    InsufficientMarkets { available: usize, needed: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    Top,
    Random,
}

impl Stratum {
    pub fn as_str(self) -> &'static str {
        match self {
            Stratum::Top => "top",
            Stratum::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelMember {
    pub stratum: Stratum,
    /// Position within the stratum: volume rank or draw order.
    pub rank: usize,
    pub volume_usdc: f64,
    pub trade_count: u64,
    pub meta: MarketMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub members: Vec<PanelMember>,
    /// Markets with activity but no metadata; left out of both strata.
    pub metadata_miss: usize,
    pub spec_hash: String,
    /// SHA-256 of [`Panel::canonical_bytes`].
    pub content_hash: String,
}

#[derive(Debug, Clone, Default)]
pub struct MarketActivity {
    pub volume_usdc: BTreeMap<String, f64>,
    pub trade_counts: BTreeMap<String, u64>,
}

/// Volume summed over both tokens and trade counts per market, for trades inside the window.
pub fn market_activity(trades: &[SignedTrade], window: (i64, i64)) -> MarketActivity {
    let mut micro: BTreeMap<String, u128> = BTreeMap::new();
    let mut a = MarketActivity::default();
    for t in trades {
        if t.ts < window.0 as f64 || t.ts >= window.1 as f64 {
            continue;
        }
        *micro.entry(t.market_id.to_string()).or_default() += u128::from(t.usdc_micro);
        *a.trade_counts.entry(t.market_id.to_string()).or_default() += 1;
    }
    a.volume_usdc = micro.into_iter().map(|(k, v)| (k, v as f64 / 1e6)).collect();
    a
}

/// Uniform draw in `[0, n)` by rejection on 64-bit words.
fn below(rng: &mut ChaCha20Rng, n: u64) -> u64 {
    let zone = u64::MAX - u64::MAX % n;
    loop {
        let x = rng.next_u64();
        if x < zone {
            return x % n;
        }
    }
}

/// `k` items drawn without replacement by a partial Fisher-Yates shuffle.
pub fn sample_without_replacement<T: Clone>(items: &[T], k: usize, seed: u64) -> Vec<T> {
    let mut rng = ChaCha20Rng::from_seed(derive_seed(RNG_ALGORITHM.as_bytes(), seed, 0));
    let mut v = items.to_vec();
    let k = k.min(v.len());
    for i in 0..k {
        let j = i + below(&mut rng, (v.len() - i) as u64) as usize;
        v.swap(i, j);
    }
    v.truncate(k);
    v
}

pub fn build_panel(activity: &MarketActivity, metadata: &MetadataCache, spec: &PanelSpec) -> Result<Panel, PanelError> {
    let mut markets: Vec<(&str, f64, u64)> = Vec::new();
    let mut metadata_miss = 0;
    let ids: BTreeSet<&String> = activity.volume_usdc.keys().chain(activity.trade_counts.keys()).collect();
    for id in ids {
        if metadata.market(id).is_none() {
            metadata_miss += 1;
            continue;
        }
        let v = activity.volume_usdc.get(id).copied().unwrap_or(0.0);
        let n = activity.trade_counts.get(id).copied().unwrap_or(0);
        markets.push((id, v, n));
    }
    if markets.len() < spec.top_n {
        return Err(PanelError::InsufficientMarkets {
            available: markets.len(),
            needed: spec.top_n,
        });
    }
    markets.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let (top, rest) = markets.split_at(spec.top_n);
    // rest is re-sorted by id so the draw does not depend on volume ties
    let mut eligible: Vec<(&str, f64, u64)> = rest.iter().filter(|m| m.2 >= spec.min_trades).copied().collect();
    eligible.sort_by(|a, b| a.0.cmp(b.0));
    if eligible.len() < spec.random_n {
        return Err(PanelError::InsufficientEligible {
            eligible: eligible.len(),
            needed: spec.random_n,
        });
    }
    let drawn = sample_without_replacement(&eligible, spec.random_n, spec.seed);
    let member = |stratum, rank, (id, v, n): (&str, f64, u64)| PanelMember {
        stratum,
        rank,
        volume_usdc: v,
        trade_count: n,
        meta: metadata.market(id).expect("resolved above").clone(),
    };
    let members: Vec<PanelMember> = top
        .iter()
        .enumerate()
        .map(|(i, m)| member(Stratum::Top, i + 1, *m))
        .chain(drawn.into_iter().enumerate().map(|(i, m)| member(Stratum::Random, i + 1, m)))
        .collect();
    let mut panel = Panel {
        members,
        metadata_miss,
        spec_hash: spec.hash(),
        content_hash: String::new(),
    };
    panel.content_hash = sha256_hex(&panel.canonical_bytes());
    Ok(panel)
}

impl Panel {
    /// Platform-independent text encoding of the members, one line each.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut s = String::from("stratum\trank\tmarket_id\tvolume_usdc\ttrade_count\tyes_token_id\tno_token_id\tquestion\tend_date_iso\tclosed\n");
        for m in &self.members {
            let q = m.meta.question.replace(['\t', '\n'], " ");
            writeln!(
                s,
                "{}\t{}\t{}\t{:.6}\t{}\t{}\t{}\t{}\t{}\t{}",
                m.stratum.as_str(),
                m.rank,
                m.meta.condition_id,
                m.volume_usdc,
                m.trade_count,
                m.meta.yes_token_id,
                m.meta.no_token_id,
                q,
                m.meta.end_date_iso.as_deref().unwrap_or(""),
                m.meta.closed
            )
            .expect("string write");
        }
        s.into_bytes()
    }

    pub fn market_ids(&self) -> Vec<&str> {
        self.members.iter().map(|m| m.meta.condition_id.as_str()).collect()
    }

    pub fn to_table(&self, spec: &PanelSpec) -> Table {
        let m = &self.members;
        let s = |f: &dyn Fn(&PanelMember) -> String| Column::Str(m.iter().map(|x| Some(f(x))).collect());
        let mut t = Table::new()
            .with("stratum", s(&|x| x.stratum.as_str().to_string()))
            .with("rank", Column::I64(m.iter().map(|x| Some(x.rank as i64)).collect()))
            .with("market_id", s(&|x| x.meta.condition_id.clone()))
            .with("volume_usdc", Column::F64(m.iter().map(|x| Some(x.volume_usdc)).collect()))
            .with("trade_count", Column::I64(m.iter().map(|x| Some(x.trade_count as i64)).collect()))
            .with("yes_token_id", s(&|x| x.meta.yes_token_id.clone()))
            .with("no_token_id", s(&|x| x.meta.no_token_id.clone()))
            .with("question", s(&|x| x.meta.question.clone()))
            .with("end_date_iso", Column::Str(m.iter().map(|x| x.meta.end_date_iso.clone()).collect()))
            .with("closed", Column::Bool(m.iter().map(|x| Some(x.meta.closed)).collect()));
        t.set_metadata("schema", "panel.v1");
        t.set_metadata("rng_algorithm", RNG_ALGORITHM);
        t.set_metadata("seed", spec.seed.to_string());
        t.set_metadata("spec_hash", &self.spec_hash);
        t.set_metadata("content_sha256", &self.content_hash);
        t.set_metadata("metadata_miss", self.metadata_miss.to_string());
        t
    }
}

/// Synthetic activity and metadata for `n` markets, for tests and demos.
pub fn synthetic_universe(n: usize, seed: u64) -> (MarketActivity, MetadataCache) {
    let mut rng = ChaCha20Rng::from_seed(derive_seed(b"panel-universe", seed, 0));
    let mut a = MarketActivity::default();
    let mut metas = Vec::new();
    for i in 0..n {
        let id = format!("0x{:064x}", i + 1);
        a.volume_usdc.insert(id.clone(), (below(&mut rng, 1_000_000_000) as f64) / 100.0);
        a.trade_counts.insert(id.clone(), 50 + below(&mut rng, 2000));
        metas.push(MarketMeta {
            condition_id: id,
            yes_token_id: format!("{}", 2 * i + 1),
            no_token_id: format!("{}", 2 * i + 2),
            question: format!("Synthetic market {i}?"),
            end_date_iso: Some("2026-06-30T00:00:00Z".into()),
            closed: i % 7 == 0,
        });
    }
    (a, MetadataCache::new(metas))
}
