//! Sharded, resumable `OrderFilled` scraper with adaptive chunk sizing.
//!
//! The block range is cut into slices aligned to multiples of
//! [`SHARD_BLOCKS`]. Each slice is fetched in chunks whose size halves when the
//! provider rejects a range and grows by a quarter after a run of successes.
//! Logs are deduplicated on `(tx_hash, log_index)`, decoded, sorted by
//! `(block, log_index, tx_hash)` and written as one immutable shard, so shard
//! bytes do not depend on the chunk schedule.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use primitive_types::{H160, H256, U256};

use super::fill::{decode_order_filled, h160_hex, h256_hex, order_filled_topic, parse_h160, parse_h256, OnChainFill, RawLog};
use super::rpc::{LogSource, RpcError};
use super::time::{interpolate_block_ts, BlockAnchor, DEFAULT_SECS_PER_BLOCK};
use crate::io::{Column, Table, TableError};

pub const SHARD_BLOCKS: u64 = 5_000;
pub const REORG_BUFFER: u64 = 256;

#[derive(Debug, thiserror::Error)]
pub enum ScrapeError {
    #[error("to_block {to} is within {REORG_BUFFER} blocks of head {head}")]
    ReorgDepth { to: u64, head: u64 },
    #[error("empty block range {from}..={to}")]
    BadRange { from: u64, to: u64 },
    #[error("provider rejects even {0}-block chunks")]
    ChunkFloor(u64),
    #[error("rpc failed after retries: {0}")]
    Rpc(RpcError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed shard {0}: {1}")]
    BadShard(PathBuf, String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChunkPolicy {
    pub init: u64,
    pub min: u64,
    pub max: u64,
    /// Consecutive successes before growing.
    pub grow_after: u32,
}

impl Default for ChunkPolicy {
    fn default() -> Self {
        ChunkPolicy {
            init: 2_000,
            min: 1,
            max: SHARD_BLOCKS,
            grow_after: 5,
        }
    }
}

/// Halve on rejection, grow 25% after `grow_after` consecutive successes.
#[derive(Debug, Clone)]
pub struct AdaptiveChunker {
    policy: ChunkPolicy,
    size: u64,
    streak: u32,
}

impl AdaptiveChunker {
    pub fn new(policy: ChunkPolicy) -> Self {
        let size = policy.init.clamp(policy.min.max(1), policy.max.max(1));
        AdaptiveChunker {
            policy,
            size,
            streak: 0,
        }
    }

    pub fn size(&self) -> u64 {
        self.size
    }

    pub fn on_success(&mut self) {
        self.streak += 1;
        if self.streak >= self.policy.grow_after {
            self.streak = 0;
            let grown = (self.size + self.size.div_ceil(4)).max(self.size + 1);
            self.size = grown.min(self.policy.max.max(1));
        }
    }

    /// Returns false when already at the floor.
    pub fn on_rejection(&mut self) -> bool {
        self.streak = 0;
        if self.size <= self.policy.min.max(1) {
            return false;
        }
        self.size = (self.size / 2).max(self.policy.min.max(1));
        true
    }
}

/// Global request spacing shared across fetchers.
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    pub fn per_second(rps: Option<f64>) -> RateLimiter {
        let interval = match rps {
            Some(r) if r > 0.0 => Duration::from_secs_f64(1.0 / r),
            _ => Duration::ZERO,
        };
        RateLimiter {
            interval,
            next: Mutex::new(Instant::now()),
        }
    }

    pub fn acquire(&self) {
        if self.interval.is_zero() {
            return;
        }
        let slot = {
            let mut next = self.next.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot
        };
        let now = Instant::now();
        if slot > now {
            std::thread::sleep(slot - now);
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScrapeConfig {
    pub from_block: u64,
    pub to_block: u64,
    pub address: H160,
    pub topic0: H256,
    pub policy: ChunkPolicy,
    pub out_dir: PathBuf,
    pub resume: bool,
    pub max_retries: u32,
    pub backoff: Duration,
    pub max_rps: Option<f64>,
    pub workers: usize,
    pub anchor: Option<BlockAnchor>,
    pub secs_per_block: f64,
}

impl ScrapeConfig {
    pub fn new(from_block: u64, to_block: u64, address: H160, out_dir: impl Into<PathBuf>) -> Self {
        ScrapeConfig {
            from_block,
            to_block,
            address,
            topic0: order_filled_topic(),
            policy: ChunkPolicy::default(),
            out_dir: out_dir.into(),
            resume: false,
            max_retries: 5,
            backoff: Duration::from_millis(500),
            max_rps: None,
            workers: 1,
            anchor: None,
            secs_per_block: DEFAULT_SECS_PER_BLOCK,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScrapeReport {
    pub shards_written: Vec<PathBuf>,
    pub shards_skipped: usize,
    pub logs: usize,
    pub duplicates_dropped: usize,
    pub decode_errors: usize,
    pub requests: usize,
    pub rejections: usize,
    pub retries: usize,
}

/// Shard-aligned slices of `[from, to]`.
pub fn shard_ranges(from: u64, to: u64) -> Vec<(u64, u64)> {
    let mut out = Vec::new();
    let mut start = from;
    while start <= to {
        let end = ((start / SHARD_BLOCKS + 1) * SHARD_BLOCKS - 1).min(to);
        out.push((start, end));
        if end == u64::MAX {
            break;
        }
        start = end + 1;
    }
    out
}

pub fn shard_file_name(start: u64, end: u64) -> String {
    format!("fills_{start:010}_{end:010}.parquet")
}

#[derive(Default)]
struct Counters {
    requests: AtomicUsize,
    rejections: AtomicUsize,
    retries: AtomicUsize,
}

fn fetch_chunk(
    src: &dyn LogSource,
    cfg: &ScrapeConfig,
    limiter: &RateLimiter,
    counters: &Counters,
    from: u64,
    to: u64,
) -> Result<Vec<RawLog>, RpcError> {
    let mut attempt = 0;
    loop {
        limiter.acquire();
        counters.requests.fetch_add(1, Ordering::Relaxed);
        match src.get_logs(from, to, cfg.address, cfg.topic0) {
            Err(e) if e.is_transient() && attempt < cfg.max_retries => {
                counters.retries.fetch_add(1, Ordering::Relaxed);
                tracing::debug!(from, to, attempt, error = %e, "retrying chunk");
                std::thread::sleep(cfg.backoff * 2u32.pow(attempt.min(16)));
                attempt += 1;
            }
            other => return other,
        }
    }
}

/// All logs in `[from, to]`, fetched with the adaptive chunk schedule.
fn fetch_range(
    src: &dyn LogSource,
    cfg: &ScrapeConfig,
    limiter: &RateLimiter,
    counters: &Counters,
    chunker: &mut AdaptiveChunker,
    from: u64,
    to: u64,
) -> Result<Vec<RawLog>, ScrapeError> {
    let mut out = Vec::new();
    let mut start = from;
    while start <= to {
        let end = start.saturating_add(chunker.size() - 1).min(to);
        match fetch_chunk(src, cfg, limiter, counters, start, end) {
            Ok(logs) => {
                out.extend(logs);
                chunker.on_success();
                start = end + 1;
            }
            Err(RpcError::ChunkTooLarge) => {
                counters.rejections.fetch_add(1, Ordering::Relaxed);
                if !chunker.on_rejection() {
                    return Err(ScrapeError::ChunkFloor(chunker.size()));
                }
            }
            Err(e) => return Err(ScrapeError::Rpc(e)),
        }
    }
    Ok(out)
}

struct ShardOutcome {
    path: Option<PathBuf>,
    logs: usize,
    duplicates: usize,
    decode_errors: usize,
}

fn scrape_shard(
    src: &dyn LogSource,
    cfg: &ScrapeConfig,
    limiter: &RateLimiter,
    counters: &Counters,
    chunker: &mut AdaptiveChunker,
    (start, end): (u64, u64),
) -> Result<ShardOutcome, ScrapeError> {
    let name = shard_file_name(start, end);
    let primary = cfg.out_dir.join(&name);
    if cfg.resume && primary.exists() {
        return Ok(ShardOutcome {
            path: None,
            logs: 0,
            duplicates: 0,
            decode_errors: 0,
        });
    }
    let raw = fetch_range(src, cfg, limiter, counters, chunker, start, end)?;
    let fetched = raw.len();
    let mut unique: BTreeMap<(H256, u64), RawLog> = BTreeMap::new();
    for log in raw {
        unique.entry(log.key()).or_insert(log);
    }
    let duplicates = fetched - unique.len();
    let mut fills = Vec::with_capacity(unique.len());
    let mut decode_errors = 0;
    for log in unique.values() {
        match decode_order_filled(log) {
            Ok(mut f) => {
                f.block_ts = cfg
                    .anchor
                    .and_then(|a| interpolate_block_ts(f.block_number, a, cfg.secs_per_block).ok());
                fills.push(f);
            }
            Err(e) => {
                tracing::warn!(error = %e, "undecodable log");
                decode_errors += 1;
            }
        }
    }
    sort_fills(&mut fills);
    // immutable shards: a re-scrape writes beside the existing file
    let mut path = primary;
    let mut k = 1;
    while path.exists() {
        path = cfg.out_dir.join(format!("{}.r{k}.parquet", name.trim_end_matches(".parquet")));
        k += 1;
    }
    let mut table = fills_table(&fills);
    table.set_metadata("shard_start", start.to_string());
    table.set_metadata("shard_end", end.to_string());
    table.write_parquet(&path)?;
    Ok(ShardOutcome {
        path: Some(path),
        logs: fills.len(),
        duplicates,
        decode_errors,
    })
}

pub fn sort_fills(fills: &mut [OnChainFill]) {
    fills.sort_by(|a, b| {
        (a.block_number, a.log_index, a.tx_hash).cmp(&(b.block_number, b.log_index, b.tx_hash))
    });
}

/// Scrapes `[from_block, to_block]` into shards under `cfg.out_dir`.
pub fn scrape_fills(src: &dyn LogSource, cfg: &ScrapeConfig) -> Result<ScrapeReport, ScrapeError> {
    if cfg.to_block < cfg.from_block {
        return Err(ScrapeError::BadRange {
            from: cfg.from_block,
            to: cfg.to_block,
        });
    }
    let head = src.head_block().map_err(ScrapeError::Rpc)?;
    if cfg.to_block.saturating_add(REORG_BUFFER) > head {
        return Err(ScrapeError::ReorgDepth {
            to: cfg.to_block,
            head,
        });
    }
    fs::create_dir_all(&cfg.out_dir).map_err(|source| ScrapeError::Io {
        path: cfg.out_dir.clone(),
        source,
    })?;
    let ranges = shard_ranges(cfg.from_block, cfg.to_block);
    let limiter = RateLimiter::per_second(cfg.max_rps);
    let counters = Counters::default();
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let results: Mutex<Vec<(usize, Result<ShardOutcome, ScrapeError>)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..cfg.workers.max(1) {
            scope.spawn(|| {
                let mut chunker = AdaptiveChunker::new(cfg.policy);
                loop {
                    if failed.load(Ordering::Relaxed) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&range) = ranges.get(i) else { break };
                    let r = scrape_shard(src, cfg, &limiter, &counters, &mut chunker, range);
                    if r.is_err() {
                        failed.store(true, Ordering::Relaxed);
                    }
                    results.lock().expect("results poisoned").push((i, r));
                }
            });
        }
    });
    let mut results = results.into_inner().expect("results poisoned");
    results.sort_by_key(|(i, _)| *i);
    let mut report = ScrapeReport::default();
    for (_, r) in results {
        let o = r?;
        match o.path {
            Some(p) => report.shards_written.push(p),
            None => report.shards_skipped += 1,
        }
        report.logs += o.logs;
        report.duplicates_dropped += o.duplicates;
        report.decode_errors += o.decode_errors;
    }
    report.requests = counters.requests.into_inner();
    report.rejections = counters.rejections.into_inner();
    report.retries = counters.retries.into_inner();
    Ok(report)
}

pub fn fills_table(fills: &[OnChainFill]) -> Table {
    let s = |f: &dyn Fn(&OnChainFill) -> String| Column::Str(fills.iter().map(|x| Some(f(x))).collect());
    Table::new()
        .with("tx_hash", s(&|f| h256_hex(&f.tx_hash)))
        .with("log_index", Column::I64(fills.iter().map(|f| Some(f.log_index as i64)).collect()))
        .with("order_hash", s(&|f| h256_hex(&f.order_hash)))
        .with("maker", s(&|f| h160_hex(&f.maker)))
        .with("taker", s(&|f| h160_hex(&f.taker)))
        .with("maker_asset_id", s(&|f| f.maker_asset_id.to_string()))
        .with("taker_asset_id", s(&|f| f.taker_asset_id.to_string()))
        .with("maker_amount", s(&|f| f.maker_amount.to_string()))
        .with("taker_amount", s(&|f| f.taker_amount.to_string()))
        .with("fee", s(&|f| f.fee.to_string()))
        .with("block_number", Column::I64(fills.iter().map(|f| Some(f.block_number as i64)).collect()))
        .with("block_ts", Column::F64(fills.iter().map(|f| f.block_ts).collect()))
}

pub fn table_fills(table: &Table, origin: &Path) -> Result<Vec<OnChainFill>, ScrapeError> {
    let bad = |m: &str| ScrapeError::BadShard(origin.to_path_buf(), m.to_string());
    let strs = |c: &str| table.strs(c).map_err(ScrapeError::from);
    let (tx, oh, mk, tk) = (strs("tx_hash")?, strs("order_hash")?, strs("maker")?, strs("taker")?);
    let (ma, ta, mam, tam, fee) = (
        strs("maker_asset_id")?,
        strs("taker_asset_id")?,
        strs("maker_amount")?,
        strs("taker_amount")?,
        strs("fee")?,
    );
    let li = table.i64s("log_index")?;
    let bn = table.i64s("block_number")?;
    let ts = table.f64s("block_ts")?;
    let u = |v: &Option<String>, c: &str| {
        v.as_deref()
            .and_then(|s| U256::from_dec_str(s).ok())
            .ok_or_else(|| bad(c))
    };
    (0..table.num_rows())
        .map(|i| {
            Ok(OnChainFill {
                tx_hash: tx[i].as_deref().and_then(parse_h256).ok_or_else(|| bad("tx_hash"))?,
                log_index: li[i].ok_or_else(|| bad("log_index"))? as u64,
                order_hash: oh[i].as_deref().and_then(parse_h256).ok_or_else(|| bad("order_hash"))?,
                maker: mk[i].as_deref().and_then(parse_h160).ok_or_else(|| bad("maker"))?,
                taker: tk[i].as_deref().and_then(parse_h160).ok_or_else(|| bad("taker"))?,
                maker_asset_id: u(&ma[i], "maker_asset_id")?,
                taker_asset_id: u(&ta[i], "taker_asset_id")?,
                maker_amount: u(&mam[i], "maker_amount")?,
                taker_amount: u(&tam[i], "taker_amount")?,
                fee: u(&fee[i], "fee")?,
                block_number: bn[i].ok_or_else(|| bad("block_number"))? as u64,
                block_ts: ts[i],
            })
        })
        .collect()
}

/// All shards in `dir`, reconciled on `(tx_hash, log_index)` and sorted.
pub fn read_fills_dir(dir: &Path) -> Result<Vec<OnChainFill>, ScrapeError> {
    let rd = fs::read_dir(dir).map_err(|source| ScrapeError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "parquet"))
        .collect();
    paths.sort();
    let mut unique: BTreeMap<(H256, u64), OnChainFill> = BTreeMap::new();
    for p in paths {
        let t = Table::read_parquet(&p)?;
        for f in table_fills(&t, &p)? {
            unique.entry((f.tx_hash, f.log_index)).or_insert(f);
        }
    }
    let mut fills: Vec<OnChainFill> = unique.into_values().collect();
    sort_fills(&mut fills);
    Ok(fills)
}
