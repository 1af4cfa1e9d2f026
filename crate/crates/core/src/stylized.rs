//! Panel stylized facts SF1 to SF8.
//!
//! Each fact is a function of per-market inputs. [`summarize_markets`]
//! reduces raw book samples, feed events and on-chain trades to one
//! [`MarketSummary`] per market; the panel-level facts then work on those.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::MetadataCache;
use crate::feed::{BookEvent, SampledBook};
use crate::io::{Column, Table};
use crate::stats::ols::{ols_hc3, OlsError};
use crate::stats::proportion::{binomial_two_sided, BinomialMethod};
use crate::stats::quantile::{mean, median, percentile, percentile_sorted};
use crate::trade::SignedTrade;

pub const BLOCK_GRID_MS: i64 = 2000;
pub const BLOCK_TOLERANCE_MS: i64 = 100;
pub const ALIGNMENT_NULL: f64 = 0.10;
pub const WASH_BUFFER_BLOCKS: u64 = 128;
pub const MIN_CATEGORY_MARKETS: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SfError {
    #[error("no events")]
    NoEvents,
    #[error("no trades")]
    NoTrades,
    #[error("too few markets for the regression ({0})")]
    TooFewMarkets(usize),
    #[error("regression: {0}")]
    Regression(#[from] OlsError),
    #[error("lexicon: {0}")]
    Lexicon(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Crypto,
    Sports,
    Politics,
    Business,
    Entertainment,
    Geopolitics,
    Other,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Crypto,
        Category::Sports,
        Category::Politics,
        Category::Business,
        Category::Entertainment,
        Category::Geopolitics,
        Category::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Crypto => "Crypto",
            Category::Sports => "Sports",
            Category::Politics => "Politics",
            Category::Business => "Business",
            Category::Entertainment => "Entertainment",
            Category::Geopolitics => "Geopolitics",
            Category::Other => "Other",
        }
    }

    pub fn parse(s: &str) -> Option<Category> {
        Category::ALL.into_iter().find(|c| c.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Deserialize)]
struct LexiconFile {
    version: String,
    order: Vec<String>,
    keywords: BTreeMap<String, Vec<String>>,
}

/// Keyword lexicon mapping question text to a category.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub version: String,
    rules: Vec<(Category, Vec<String>)>,
}

const BUILTIN_LEXICON: &str = include_str!("../data/lexicon.toml");

fn normalize(text: &str) -> String {
    let words: Vec<String> = text
        .split(|c: char| !(c.is_alphanumeric() || c == '&'))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    format!(" {} ", words.join(" "))
}

impl Lexicon {
    pub fn builtin() -> Lexicon {
        Lexicon::from_toml(BUILTIN_LEXICON).expect("bundled lexicon parses")
    }

    pub fn from_toml(text: &str) -> Result<Lexicon, SfError> {
        let f: LexiconFile = toml::from_str(text).map_err(|e| SfError::Lexicon(e.to_string()))?;
        let mut rules = Vec::new();
        for name in &f.order {
            let cat = Category::parse(name).ok_or_else(|| SfError::Lexicon(format!("unknown category {name}")))?;
            let words = f.keywords.get(name).cloned().unwrap_or_default();
            rules.push((cat, words.iter().map(|w| normalize(w)).collect()));
        }
        Ok(Lexicon {
            version: f.version,
            rules,
        })
    }

    pub fn classify(&self, question: &str) -> Category {
        let q = normalize(question);
        self.rules
            .iter()
            .find(|(_, kws)| kws.iter().any(|k| q.contains(k.as_str())))
            .map(|(c, _)| *c)
            .unwrap_or(Category::Other)
    }
}

/// Folds categories with fewer than `min_markets` members into Other.
pub fn merge_small_categories(categories: &mut [Category], min_markets: usize) {
    let mut counts: HashMap<Category, usize> = HashMap::new();
    for c in categories.iter() {
        *counts.entry(*c).or_default() += 1;
    }
    for c in categories.iter_mut() {
        if counts[c] < min_markets {
            *c = Category::Other;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketSummary {
    pub market_id: Arc<str>,
    pub mean_mid: Option<f64>,
    pub median_quoted_half_bps: Option<f64>,
    /// Mean two-sided top-of-book depth, tokens.
    pub depth_l1: Option<f64>,
    /// Mean two-sided cumulative top-10 depth, tokens.
    pub depth_l10: Option<f64>,
    pub block_align_share: Option<f64>,
    pub maker_hhi: Option<f64>,
    pub category: Category,
    pub latency_p50: Option<f64>,
    pub latency_p90: Option<f64>,
    pub latency_p99: Option<f64>,
    pub wash_share: Option<f64>,
    pub mean_depth_l10: Option<f64>,
    pub seconds_to_close: Option<f64>,
    pub usdc_volume: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sf1Bin {
    pub lo: f64,
    pub hi: f64,
    pub markets: usize,
    pub median: Option<f64>,
    pub p25: Option<f64>,
    pub p75: Option<f64>,
}

/// Ten fixed-width mid bins; the last bin is closed at 1.
pub fn sf1_longshot(summaries: &[MarketSummary]) -> Vec<Sf1Bin> {
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); 10];
    for s in summaries {
        if let (Some(m), Some(q)) = (s.mean_mid, s.median_quoted_half_bps) {
            bins[((m * 10.0).floor() as usize).min(9)].push(q);
        }
    }
    bins.into_iter()
        .enumerate()
        .map(|(i, v)| Sf1Bin {
            lo: i as f64 / 10.0,
            hi: (i + 1) as f64 / 10.0,
            markets: v.len(),
            median: percentile(&v, 0.5).ok(),
            p25: percentile(&v, 0.25).ok(),
            p75: percentile(&v, 0.75).ok(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sf2 {
    pub ratios: Vec<(Arc<str>, f64)>,
    pub median: Option<f64>,
    pub p10: Option<f64>,
    pub p90: Option<f64>,
    pub zero_depth: usize,
}

/// Top-of-book share of the cumulative depth of a ladder, best level first.
pub fn ladder_depth_ratio(sizes: &[f64]) -> Option<f64> {
    let total: f64 = sizes.iter().take(10).sum();
    (total > 0.0).then(|| sizes[0] / total)
}

pub fn sf2_depth_ratio(summaries: &[MarketSummary]) -> Sf2 {
    let mut ratios = Vec::new();
    let mut zero = 0;
    for s in summaries {
        match (s.depth_l1, s.depth_l10) {
            (Some(a), Some(b)) if b > 0.0 => ratios.push((s.market_id.clone(), a / b)),
            (Some(_), Some(_)) => zero += 1,
            _ => {}
        }
    }
    let v: Vec<f64> = ratios.iter().map(|r| r.1).collect();
    Sf2 {
        median: percentile(&v, 0.5).ok(),
        p10: percentile(&v, 0.1).ok(),
        p90: percentile(&v, 0.9).ok(),
        ratios,
        zero_depth: zero,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sf3 {
    pub n: u64,
    pub aligned: u64,
    pub share: f64,
    pub p_value: f64,
    pub method: BinomialMethod,
}

/// Within `[-tol, tol)` of the nearest multiple of `grid_ms`.
pub fn is_block_aligned(ts_ms: i64, grid_ms: i64, tol_ms: i64) -> bool {
    let r = ts_ms.rem_euclid(grid_ms);
    r < tol_ms || r >= grid_ms - tol_ms
}

pub fn sf3_block_alignment(ts_ms: &[i64], grid_ms: i64, tol_ms: i64) -> Result<Sf3, SfError> {
    if ts_ms.is_empty() {
        return Err(SfError::NoEvents);
    }
    let n = ts_ms.len() as u64;
    let aligned = ts_ms.iter().filter(|&&t| is_block_aligned(t, grid_ms, tol_ms)).count() as u64;
    let null = 2.0 * tol_ms as f64 / grid_ms as f64;
    let test = binomial_two_sided(aligned, n, null);
    Ok(Sf3 {
        n,
        aligned,
        share: aligned as f64 / n as f64,
        p_value: test.p_value,
        method: test.method,
    })
}

/// Volume-weighted Herfindahl index of maker shares.
pub fn sf4_maker_hhi<'a>(trades: impl IntoIterator<Item = &'a SignedTrade>) -> Result<f64, SfError> {
    let mut by_maker: HashMap<Option<&str>, u128> = HashMap::new();
    let mut total: u128 = 0;
    for t in trades {
        *by_maker.entry(t.maker.as_deref()).or_default() += u128::from(t.usdc_micro);
        total += u128::from(t.usdc_micro);
    }
    if total == 0 {
        return Err(SfError::NoTrades);
    }
    let mut shares: Vec<f64> = by_maker.values().map(|&v| v as f64 / total as f64).collect();
    shares.sort_by(f64::total_cmp);
    Ok(shares.iter().map(|s| s * s).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sf6 {
    pub n: usize,
    pub negative: usize,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
}

/// Percentiles of `ts_created - ts_received`; negative deltas are counted and left out.
pub fn sf6_latency<'a>(events: impl IntoIterator<Item = &'a BookEvent>) -> Result<Sf6, SfError> {
    let mut d = Vec::new();
    let mut negative = 0;
    for e in events {
        let x = e.ts_created - e.ts_received;
        if x < 0 {
            negative += 1;
        } else {
            d.push(x as f64);
        }
    }
    latency_percentiles(d, negative)
}

pub fn latency_percentiles(mut deltas_ms: Vec<f64>, negative: usize) -> Result<Sf6, SfError> {
    if deltas_ms.is_empty() {
        return Err(SfError::NoEvents);
    }
    deltas_ms.sort_by(f64::total_cmp);
    let p = |q| percentile_sorted(&deltas_ms, q).expect("non-empty");
    Ok(Sf6 {
        n: deltas_ms.len(),
        negative,
        p50: p(0.5),
        p90: p(0.9),
        p99: p(0.99),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sf7 {
    pub flagged: Vec<bool>,
    pub volume_share: f64,
    pub count_share: f64,
}

/// Flags self-matches and both legs of flipped counterparty pairs within
/// `buffer` blocks. Trades without maker, taker or block are never flagged.
pub fn sf7_wash(trades: &[&SignedTrade], buffer: u64) -> Result<Sf7, SfError> {
    if trades.is_empty() {
        return Err(SfError::NoTrades);
    }
    let mut pairs: HashMap<(&str, &str), Vec<u64>> = HashMap::new();
    for t in trades {
        if let (Some(m), Some(k), Some(b)) = (t.maker.as_deref(), t.taker.as_deref(), t.block_number) {
            pairs.entry((m, k)).or_default().push(b);
        }
    }
    for v in pairs.values_mut() {
        v.sort_unstable();
    }
    let flagged: Vec<bool> = trades
        .iter()
        .map(|t| {
            let (Some(m), Some(k), Some(b)) = (t.maker.as_deref(), t.taker.as_deref(), t.block_number) else {
                return false;
            };
            if m == k {
                return true;
            }
            pairs.get(&(k, m)).is_some_and(|blocks| {
                let i = blocks.partition_point(|&x| x < b.saturating_sub(buffer));
                blocks.get(i).is_some_and(|&x| x <= b + buffer)
            })
        })
        .collect();
    let total: f64 = trades.iter().map(|t| t.usdc_micro as f64).sum();
    let hit = trades
        .iter()
        .zip(&flagged)
        .filter(|(_, f)| **f)
        .fold(0.0, |a, (t, _)| a + t.usdc_micro as f64);
    let count = flagged.iter().filter(|f| **f).count();
    Ok(Sf7 {
        volume_share: if total > 0.0 { hit / total } else { 0.0 },
        count_share: count as f64 / trades.len() as f64,
        flagged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sf8Spec {
    Bivariate,
    CategoryFe,
    CategoryFeLogVolume,
}

impl Sf8Spec {
    pub const ALL: [Sf8Spec; 3] = [Sf8Spec::Bivariate, Sf8Spec::CategoryFe, Sf8Spec::CategoryFeLogVolume];

    pub fn as_str(self) -> &'static str {
        match self {
            Sf8Spec::Bivariate => "bivariate",
            Sf8Spec::CategoryFe => "category_fe",
            Sf8Spec::CategoryFeLogVolume => "category_fe_log_volume",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sf8Fit {
    pub spec: Sf8Spec,
    pub n: usize,
    pub slope: f64,
    pub se: f64,
    pub r_squared: f64,
}

/// OLS of log mean L10 depth on log seconds-to-close with optional category
/// dummies (Other or the first present category is the base) and log volume.
pub fn sf8_depth_decay(summaries: &[MarketSummary], spec: Sf8Spec) -> Result<Sf8Fit, SfError> {
    let usable: Vec<&MarketSummary> = summaries
        .iter()
        .filter(|s| s.seconds_to_close.is_some_and(|t| t > 0.0) && s.mean_depth_l10.is_some_and(|d| d > 0.0))
        .filter(|s| spec != Sf8Spec::CategoryFeLogVolume || s.usdc_volume > 0.0)
        .collect();
    let mut cats: Vec<Category> = usable.iter().map(|s| s.category).collect();
    cats.sort();
    cats.dedup();
    let dummies: Vec<Category> = match spec {
        Sf8Spec::Bivariate => Vec::new(),
        _ => cats.into_iter().skip(1).collect(),
    };
    let k = 2 + dummies.len() + usize::from(spec == Sf8Spec::CategoryFeLogVolume);
    if usable.len() <= k {
        return Err(SfError::TooFewMarkets(usable.len()));
    }
    let x = nalgebra::DMatrix::from_fn(usable.len(), k, |i, j| {
        let s = usable[i];
        match j {
            0 => 1.0,
            1 => s.seconds_to_close.expect("filtered").ln(),
            j if j - 2 < dummies.len() => f64::from(u8::from(s.category == dummies[j - 2])),
            _ => s.usdc_volume.ln(),
        }
    });
    let y: Vec<f64> = usable.iter().map(|s| s.mean_depth_l10.expect("filtered").ln()).collect();
    let fit = ols_hc3(&x, &y)?;
    Ok(Sf8Fit {
        spec,
        n: usable.len(),
        slope: fit.coefficients[1],
        se: fit.hc3_standard_errors[1],
        r_squared: fit.r_squared,
    })
}

/// Inputs for building summaries.
pub struct SummaryInputs<'a> {
    /// Sampled YES-token books.
    pub books: &'a [SampledBook],
    pub events: &'a [BookEvent],
    /// On-chain trades on both tokens.
    pub trades: &'a [SignedTrade],
    pub metadata: &'a MetadataCache,
    pub lexicon: &'a Lexicon,
    /// Unix seconds at which time to close is measured.
    pub midpoint_ts: f64,
}

fn end_ts(iso: &str) -> Option<f64> {
    chrono::DateTime::parse_from_rfc3339(iso)
        .ok()
        .map(|d| d.timestamp() as f64)
        .or_else(|| {
            chrono::NaiveDate::parse_from_str(iso, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
                .map(|d| d.and_utc().timestamp() as f64)
        })
}

/// One summary per market with a sampled book, sorted by market id.
/// Categories with fewer than ten markets are folded into Other.
pub fn summarize_markets(inp: &SummaryInputs<'_>) -> Vec<MarketSummary> {
    let mut events: HashMap<&str, Vec<&BookEvent>> = HashMap::new();
    for e in inp.events {
        events.entry(&e.market_id).or_default().push(e);
    }
    let mut trades: HashMap<&str, Vec<&SignedTrade>> = HashMap::new();
    for t in inp.trades {
        trades.entry(&t.market_id).or_default().push(t);
    }
    let mut out: Vec<MarketSummary> = inp
        .books
        .par_iter()
        .map(|b| {
            let clean: Vec<_> = b.samples.iter().filter(|s| s.is_clean()).collect();
            let mids: Vec<f64> = clean.iter().filter_map(|s| s.mid).collect();
            let bps: Vec<f64> = clean.iter().filter_map(|s| s.half_spread_bps).collect();
            let d1: Vec<f64> = clean.iter().map(|s| s.depth_l1()).collect();
            let d10: Vec<f64> = clean.iter().map(|s| s.depth_l10()).collect();
            let evs = events.get(&*b.market_id).map(Vec::as_slice).unwrap_or(&[]);
            let ts: Vec<i64> = evs.iter().map(|e| e.ts_received).collect();
            let tr = trades.get(&*b.market_id).map(Vec::as_slice).unwrap_or(&[]);
            let lat = sf6_latency(evs.iter().copied()).ok();
            let meta = inp.metadata.market(&b.market_id);
            MarketSummary {
                market_id: b.market_id.clone(),
                mean_mid: mean(&mids),
                median_quoted_half_bps: median(&bps).ok(),
                depth_l1: mean(&d1),
                depth_l10: mean(&d10),
                block_align_share: sf3_block_alignment(&ts, BLOCK_GRID_MS, BLOCK_TOLERANCE_MS).ok().map(|s| s.share),
                maker_hhi: sf4_maker_hhi(tr.iter().copied()).ok(),
                category: meta.map(|m| inp.lexicon.classify(&m.question)).unwrap_or(Category::Other),
                latency_p50: lat.as_ref().map(|l| l.p50),
                latency_p90: lat.as_ref().map(|l| l.p90),
                latency_p99: lat.as_ref().map(|l| l.p99),
                wash_share: sf7_wash(tr, WASH_BUFFER_BLOCKS).ok().map(|w| w.volume_share),
                mean_depth_l10: mean(&d10),
                seconds_to_close: meta
                    .and_then(|m| m.end_date_iso.as_deref())
                    .and_then(end_ts)
                    .map(|e| e - inp.midpoint_ts),
                usdc_volume: tr.iter().fold(0.0, |a, t| a + t.size_usdc()),
            }
        })
        .collect();
    out.sort_by(|a, b| a.market_id.cmp(&b.market_id));
    let mut cats: Vec<Category> = out.iter().map(|s| s.category).collect();
    merge_small_categories(&mut cats, MIN_CATEGORY_MARKETS);
    for (s, c) in out.iter_mut().zip(cats) {
        s.category = c;
    }
    out
}

pub fn summaries_table(s: &[MarketSummary], lexicon_version: &str) -> Table {
    let f = |g: &dyn Fn(&MarketSummary) -> Option<f64>| Column::F64(s.iter().map(g).collect());
    let mut t = Table::new()
        .with("market_id", Column::Str(s.iter().map(|x| Some(x.market_id.to_string())).collect()))
        .with("mean_mid", f(&|x| x.mean_mid))
        .with("median_quoted_half_bps", f(&|x| x.median_quoted_half_bps))
        .with("depth_l1", f(&|x| x.depth_l1))
        .with("depth_l10", f(&|x| x.depth_l10))
        .with("block_align_share", f(&|x| x.block_align_share))
        .with("maker_hhi", f(&|x| x.maker_hhi))
        .with("category", Column::Str(s.iter().map(|x| Some(x.category.to_string())).collect()))
        .with("latency_p50", f(&|x| x.latency_p50))
        .with("latency_p90", f(&|x| x.latency_p90))
        .with("latency_p99", f(&|x| x.latency_p99))
        .with("wash_share", f(&|x| x.wash_share))
        .with("mean_depth_l10", f(&|x| x.mean_depth_l10))
        .with("seconds_to_close", f(&|x| x.seconds_to_close))
        .with("usdc_volume", f(&|x| Some(x.usdc_volume)));
    t.set_metadata("schema", "market_summary.v1");
    t.set_metadata("depth_units", "tokens");
    t.set_metadata("lexicon_version", lexicon_version);
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::rng::labelled_rng;
    use crate::trade::TradeSource;
    use crate::units::Sign;
    use proptest::prelude::*;
    use rand::Rng;

    pub(crate) fn summary(id: &str) -> MarketSummary {
        MarketSummary {
            market_id: Arc::from(id),
            mean_mid: None,
            median_quoted_half_bps: None,
            depth_l1: None,
            depth_l10: None,
            block_align_share: None,
            maker_hhi: None,
            category: Category::Other,
            latency_p50: None,
            latency_p90: None,
            latency_p99: None,
            wash_share: None,
            mean_depth_l10: None,
            seconds_to_close: None,
            usdc_volume: 0.0,
        }
    }

    fn trade(maker: &str, taker: &str, block: u64, usdc: u64) -> SignedTrade {
        SignedTrade {
            market_id: Arc::from("m"),
            token_id: Arc::from("y"),
            ts: block as f64 * 2.0,
            price: 0.5,
            usdc_micro: usdc,
            token_micro: usdc * 2,
            sign: Sign::Buy,
            maker: Some(Arc::from(maker)),
            taker: Some(Arc::from(taker)),
            source: TradeSource::Onchain,
            block_number: Some(block),
            event_index: None,
            level_side: None,
        }
    }

    #[test]
    fn sf1_bins() {
        let mut s = summary("a");
        s.mean_mid = Some(0.55);
        s.median_quoted_half_bps = Some(400.0);
        let bins = sf1_longshot(&[s]);
        assert_eq!(bins.len(), 10);
        assert_eq!((bins[5].markets, bins[5].median), (1, Some(400.0)));
        assert!(sf1_longshot(&[]).iter().all(|b| b.markets == 0 && b.median.is_none()));
        let mut top = summary("b");
        top.mean_mid = Some(1.0);
        top.median_quoted_half_bps = Some(1.0);
        assert_eq!(sf1_longshot(&[top])[9].markets, 1);
    }

    #[test]
    fn sf1_inverse_spread_is_monotone() {
        let panel: Vec<MarketSummary> = (1..100)
            .map(|i| {
                let mut s = summary(&format!("m{i}"));
                let mid = i as f64 / 100.0;
                s.mean_mid = Some(mid);
                s.median_quoted_half_bps = Some(50.0 / mid);
                s
            })
            .collect();
        let med: Vec<f64> = sf1_longshot(&panel).iter().filter_map(|b| b.median).collect();
        assert_eq!(med.len(), 10);
        assert!(med.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn sf2_ratios() {
        assert_eq!(ladder_depth_ratio(&[7.0; 10]), Some(0.1));
        assert_eq!(ladder_depth_ratio(&[3.0]), Some(1.0));
        let geo: Vec<f64> = (0..10).map(|k| 0.5f64.powi(k)).collect();
        let r = ladder_depth_ratio(&geo).unwrap();
        assert!((r - 1.0 / (2.0 - 0.5f64.powi(9))).abs() < 1e-15);
        assert_eq!(format!("{r:.4}"), "0.5005");
        let mut a = summary("a");
        a.depth_l1 = Some(10.0);
        a.depth_l10 = Some(100.0);
        let mut z = summary("z");
        z.depth_l1 = Some(0.0);
        z.depth_l10 = Some(0.0);
        let s = sf2_depth_ratio(&[a, z]);
        assert_eq!((s.median, s.zero_depth), (Some(0.1), 1));
    }

    #[test]
    fn sf3_examples() {
        let on: Vec<i64> = (0..1000).map(|i| i * 2000).collect();
        let s = sf3_block_alignment(&on, 2000, 100).unwrap();
        assert_eq!(s.share, 1.0);
        assert!(s.p_value < 1e-100);
        assert!(is_block_aligned(1900, 2000, 100) && !is_block_aligned(100, 2000, 100) && is_block_aligned(-50, 2000, 100));
        assert_eq!(sf3_block_alignment(&[], 2000, 100), Err(SfError::NoEvents));
        // a negligible excess is rejected at very large n
        let n = 10_000_000u64;
        let t = binomial_two_sided((n as f64 * 0.102) as u64, n, 0.1);
        assert_eq!(t.method, BinomialMethod::NormalApprox);
        assert!(t.p_value < 0.05);
    }

    #[test]
    fn sf3_uniform_share() {
        let mut rng = labelled_rng("sf3", 1, 0);
        let ts: Vec<i64> = (0..100_000).map(|_| rng.random_range(0..1_000_000_000)).collect();
        let s = sf3_block_alignment(&ts, 2000, 100).unwrap();
        assert!((s.share - 0.1).abs() < 0.003, "{}", s.share);
    }

    #[test]
    fn sf4_examples() {
        let one = [trade("a", "x", 1, 5)];
        assert_eq!(sf4_maker_hhi(&one).unwrap(), 1.0);
        let four: Vec<SignedTrade> = ["a", "b", "c", "d"].iter().map(|m| trade(m, "x", 1, 7)).collect();
        assert!((sf4_maker_hhi(&four).unwrap() - 0.25).abs() < 1e-15);
        let two = [trade("a", "x", 1, 3), trade("b", "x", 1, 1)];
        assert_eq!(sf4_maker_hhi(&two).unwrap(), 0.625);
        let with_zero = [trade("a", "x", 1, 3), trade("b", "x", 1, 1), trade("c", "x", 1, 0)];
        assert_eq!(sf4_maker_hhi(&with_zero).unwrap(), 0.625);
        assert_eq!(sf4_maker_hhi(&[]), Err(SfError::NoTrades));
    }

    #[test]
    fn sf5_lexicon() {
        let l = Lexicon::builtin();
        assert_eq!(l.classify("Will Bitcoin close above $100k?"), Category::Crypto);
        assert_eq!(l.classify("Will the Lakers win game 3?"), Category::Sports);
        assert_eq!(l.classify("xqz vvlor prrt"), Category::Other);
        assert_eq!(l.classify("Will Ethan win?"), Category::Other);
        let mut cats = vec![Category::Crypto; 10];
        cats.extend([Category::Sports; 9]);
        merge_small_categories(&mut cats, 10);
        assert_eq!(cats.iter().filter(|c| **c == Category::Other).count(), 9);
    }

    #[test]
    fn sf6_examples() {
        let l = latency_percentiles(vec![41.5; 20], 0).unwrap();
        assert_eq!((l.p50, l.p90, l.p99), (41.5, 41.5, 41.5));
        let l = latency_percentiles((1..=100).map(|i| i as f64 * 10.0).collect(), 3).unwrap();
        assert_eq!((l.p50, l.negative), (500.0, 3));
    }

    #[test]
    fn sf7_examples() {
        let t = [trade("a", "a", 1, 10), trade("b", "c", 1, 30)];
        let r = sf7_wash(&t.iter().collect::<Vec<_>>(), 128).unwrap();
        assert_eq!(r.flagged, vec![true, false]);
        assert_eq!((r.count_share, r.volume_share), (0.5, 0.25));
        let near = [trade("a", "b", 10, 1), trade("b", "a", 110, 1)];
        assert_eq!(sf7_wash(&near.iter().collect::<Vec<_>>(), 128).unwrap().flagged, vec![true, true]);
        let far = [trade("a", "b", 10, 1), trade("b", "a", 210, 1)];
        assert_eq!(sf7_wash(&far.iter().collect::<Vec<_>>(), 128).unwrap().flagged, vec![false, false]);
        let cycle = [trade("a", "b", 1, 1), trade("b", "c", 2, 1), trade("c", "a", 3, 1)];
        assert_eq!(sf7_wash(&cycle.iter().collect::<Vec<_>>(), 128).unwrap().count_share, 0.0);
    }

    proptest! {
        #[test]
        fn sf7_is_relabel_and_order_invariant(
            raw in prop::collection::vec((0u8..5, 0u8..5, 0u64..400), 1..40),
            perm_seed in any::<u64>(),
        ) {
            let names = ["a", "b", "c", "d", "e"];
            let trades: Vec<SignedTrade> = raw
                .iter()
                .map(|&(m, k, b)| trade(names[m as usize], names[k as usize], b, 1 + b))
                .collect();
            let refs: Vec<&SignedTrade> = trades.iter().collect();
            let base = sf7_wash(&refs, 128).unwrap();
            // relabel a <-> e
            let swap = |s: &str| match s { "a" => "e", "e" => "a", x => x }.to_string();
            let relabeled: Vec<SignedTrade> = trades
                .iter()
                .map(|t| trade(&swap(t.maker.as_deref().unwrap()), &swap(t.taker.as_deref().unwrap()), t.block_number.unwrap(), t.usdc_micro))
                .collect();
            prop_assert_eq!(&sf7_wash(&relabeled.iter().collect::<Vec<_>>(), 128).unwrap().flagged, &base.flagged);
            // reorder
            let mut idx: Vec<usize> = (0..trades.len()).collect();
            let mut rng = labelled_rng("perm", perm_seed, 0);
            for i in (1..idx.len()).rev() {
                idx.swap(i, rng.random_range(0..=i));
            }
            let shuffled: Vec<&SignedTrade> = idx.iter().map(|&i| &trades[i]).collect();
            let f = sf7_wash(&shuffled, 128).unwrap().flagged;
            for (pos, &i) in idx.iter().enumerate() {
                prop_assert_eq!(f[pos], base.flagged[i]);
            }
        }

        #[test]
        fn hhi_bounds_and_merging(vols in prop::collection::vec(1u64..1000, 2..12)) {
            let names: Vec<String> = (0..vols.len()).map(|i| format!("m{i}")).collect();
            let trades: Vec<SignedTrade> = vols.iter().zip(&names).map(|(v, n)| trade(n, "x", 1, *v)).collect();
            let h = sf4_maker_hhi(&trades).unwrap();
            prop_assert!(h > 0.0 && h <= 1.0 + 1e-12);
            let mut merged = trades.clone();
            merged[1].maker = merged[0].maker.clone();
            prop_assert!(sf4_maker_hhi(&merged).unwrap() >= h - 1e-12);
        }
    }

    #[test]
    fn sf8_examples() {
        let mut rng = labelled_rng("sf8", 3, 0);
        let panel: Vec<MarketSummary> = (0..200)
            .map(|i| {
                let mut s = summary(&format!("m{i}"));
                let ttc: f64 = rng.random_range(1e4..1e7);
                s.seconds_to_close = Some(ttc);
                s.mean_depth_l10 = Some(ttc.powf(0.8) * (rng.random_range(-0.5..0.5f64)).exp());
                s.usdc_volume = rng.random_range(1e3..1e6);
                s.category = if i % 2 == 0 { Category::Crypto } else { Category::Sports };
                s
            })
            .collect();
        for spec in Sf8Spec::ALL {
            let f = sf8_depth_decay(&panel, spec).unwrap();
            assert!((f.slope - 0.8).abs() < 4.0 * f.se, "{spec:?} {f:?}");
            assert_eq!(f.n, 200);
        }
        let flat: Vec<MarketSummary> = panel
            .iter()
            .map(|s| MarketSummary {
                seconds_to_close: Some(5e5),
                ..s.clone()
            })
            .collect();
        assert!(matches!(
            sf8_depth_decay(&flat, Sf8Spec::Bivariate),
            Err(SfError::Regression(OlsError::RankDeficient))
        ));
    }
}
