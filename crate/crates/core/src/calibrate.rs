//! Calibration of inferred trades against on-chain fills.
//!
//! Trades are bucketed on a 5-second grid at exact tick price. A bucket
//! matches when both sources traded in it; its net sign is the sign of the
//! summed signed USDC. Agreement is the share of matched buckets with equal
//! non-zero net signs. Measure-level comparison counts markets where two
//! sources disagree in sign.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rayon::prelude::*;

use crate::io::{Column, Table};
use crate::measures::MeasureRow;
use crate::stats::bootstrap::{clustered_bootstrap_ci, BootstrapCi, BootstrapError};
use crate::stats::proportion::wilson_interval;
use crate::stats::quantile::{nearest_rank, QuantileError};
use crate::trade::SignedTrade;

pub const BUCKET_SECS: i64 = 5;
pub const MIN_MATCHED_BUCKETS: usize = 10;
pub const WINDOW_SECS: f64 = 7.0 * 86_400.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CalibrateError {
    #[error("no cell has enough matched buckets")]
    NoValidCells,
    #[error("no market has comparable values for `{0}`")]
    EmptyComparable(String),
    #[error(transparent)]
    Bootstrap(#[from] BootstrapError),
}

/// A half-open time window `[start, end)` in unix seconds.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Window {
    pub id: String,
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn contains(&self, ts: f64) -> bool {
        ts >= self.start && ts < self.end
    }
}

/// `count` consecutive disjoint 7-day windows starting at `start`.
pub fn weekly_windows(start: f64, count: usize) -> Vec<Window> {
    (0..count)
        .map(|i| Window {
            id: format!("w{}", i + 1),
            start: start + i as f64 * WINDOW_SECS,
            end: start + (i + 1) as f64 * WINDOW_SECS,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedBucket {
    pub market_id: Arc<str>,
    pub token_id: Arc<str>,
    pub bucket_start: i64,
    /// Price in ticks (thousandths).
    pub price: u32,
    pub inferred_net_sign: i8,
    pub onchain_net_sign: i8,
    pub inferred_usdc: f64,
    pub onchain_usdc: f64,
}

impl MatchedBucket {
    /// Both nets non-zero.
    pub fn is_signed(&self) -> bool {
        self.inferred_net_sign != 0 && self.onchain_net_sign != 0
    }

    pub fn agrees(&self) -> bool {
        self.is_signed() && self.inferred_net_sign == self.onchain_net_sign
    }
}

pub fn bucket_start(ts: f64) -> i64 {
    (ts / BUCKET_SECS as f64).floor() as i64 * BUCKET_SECS
}

#[derive(Default, Clone, Copy)]
struct Acc {
    net: i128,
    usdc: u64,
}

type BucketKey = (Arc<str>, i64, u32);

fn accumulate<'a>(trades: impl Iterator<Item = &'a SignedTrade>) -> BTreeMap<BucketKey, Acc> {
    let mut out: BTreeMap<BucketKey, Acc> = BTreeMap::new();
    for t in trades {
        let Some(tick) = t.tick() else { continue };
        let a = out.entry((t.token_id.clone(), bucket_start(t.ts), tick.milli())).or_default();
        a.net += t.signed_usdc_micro();
        a.usdc += t.usdc_micro;
    }
    out
}

/// Matched buckets between two trade streams of one market and window.
/// Buckets are keyed by token, slot and tick.
pub fn bucket_match(inferred: &[&SignedTrade], onchain: &[&SignedTrade]) -> Vec<MatchedBucket> {
    let a = accumulate(inferred.iter().copied());
    let b = accumulate(onchain.iter().copied());
    let market: Option<Arc<str>> = inferred.first().or(onchain.first()).map(|t| t.market_id.clone());
    a.iter()
        .filter_map(|(key, x)| {
            let y = b.get(key)?;
            Some(MatchedBucket {
                market_id: market.clone().expect("non-empty"),
                token_id: key.0.clone(),
                bucket_start: key.1,
                price: key.2,
                inferred_net_sign: x.net.signum() as i8,
                onchain_net_sign: y.net.signum() as i8,
                inferred_usdc: x.usdc as f64 / 1e6,
                onchain_usdc: y.usdc as f64 / 1e6,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgreementCell {
    pub market_id: Arc<str>,
    pub window_id: String,
    pub matched_buckets: usize,
    /// Matched buckets where both nets are non-zero.
    pub signed_buckets: usize,
    pub agreeing: usize,
    /// `agreeing / signed_buckets`; `None` when no bucket is signed.
    pub agreement: Option<f64>,
}

impl AgreementCell {
    pub fn from_buckets(market_id: Arc<str>, window_id: String, buckets: &[MatchedBucket]) -> AgreementCell {
        let signed = buckets.iter().filter(|b| b.is_signed()).count();
        let agreeing = buckets.iter().filter(|b| b.agrees()).count();
        AgreementCell {
            market_id,
            window_id,
            matched_buckets: buckets.len(),
            signed_buckets: signed,
            agreeing,
            agreement: (signed > 0).then(|| agreeing as f64 / signed as f64),
        }
    }

    pub fn is_valid(&self, min_buckets: usize) -> bool {
        self.matched_buckets >= min_buckets && self.agreement.is_some()
    }
}

/// Cells for every market and window. Only tokens in `tokens` take part when
/// it is given. Markets without inferred or on-chain trades in a window yield
/// a cell with zero matched buckets.
pub fn agreement_cells(
    inferred: &[SignedTrade],
    onchain: &[SignedTrade],
    windows: &[Window],
    tokens: Option<&HashSet<Arc<str>>>,
) -> (Vec<AgreementCell>, Vec<MatchedBucket>) {
    let keep = |t: &&SignedTrade| tokens.is_none_or(|s| s.contains(&t.token_id));
    let mut markets: BTreeMap<Arc<str>, (Vec<&SignedTrade>, Vec<&SignedTrade>)> = BTreeMap::new();
    for t in inferred.iter().filter(keep) {
        markets.entry(t.market_id.clone()).or_default().0.push(t);
    }
    for t in onchain.iter().filter(keep) {
        markets.entry(t.market_id.clone()).or_default().1.push(t);
    }
    let per_market: Vec<(Vec<AgreementCell>, Vec<MatchedBucket>)> = markets
        .par_iter()
        .map(|(m, (inf, on))| {
            let mut cells = Vec::new();
            let mut all = Vec::new();
            for w in windows {
                let a: Vec<&SignedTrade> = inf.iter().copied().filter(|t| w.contains(t.ts)).collect();
                let b: Vec<&SignedTrade> = on.iter().copied().filter(|t| w.contains(t.ts)).collect();
                let buckets = bucket_match(&a, &b);
                cells.push(AgreementCell::from_buckets(m.clone(), w.id.clone(), &buckets));
                all.extend(buckets);
            }
            (cells, all)
        })
        .collect();
    let mut cells = Vec::new();
    let mut buckets = Vec::new();
    for (c, b) in per_market {
        cells.extend(c);
        buckets.extend(b);
    }
    (cells, buckets)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    Unweighted,
    /// Each cell weighted by its matched-bucket count.
    BucketCount,
}

impl Weighting {
    fn weight(self, c: &AgreementCell) -> f64 {
        match self {
            Weighting::Unweighted => 1.0,
            Weighting::BucketCount => c.matched_buckets as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgreementSummary {
    pub cells: usize,
    pub markets: usize,
    pub buckets: usize,
    pub mean: f64,
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
}

/// Nearest-rank percentile with weights: the smallest value whose cumulative
/// weight reaches `q` of the total.
pub fn weighted_percentile(values: &[(f64, f64)], q: f64) -> Result<f64, QuantileError> {
    if values.is_empty() {
        return Err(QuantileError::EmptyInput);
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = v.iter().map(|x| x.1).sum();
    if v.iter().all(|x| x.1 == v[0].1) {
        return Ok(v[nearest_rank(q, v.len()) - 1].0);
    }
    let target = q * total;
    let mut acc = 0.0;
    for (x, w) in &v {
        acc += w;
        if acc >= target - 1e-9 * total {
            return Ok(*x);
        }
    }
    Ok(v[v.len() - 1].0)
}

fn valid_cells(cells: &[AgreementCell], min_buckets: usize) -> Vec<&AgreementCell> {
    cells.iter().filter(|c| c.is_valid(min_buckets)).collect()
}

fn weighted_mean(cells: &[&AgreementCell], weighting: Weighting) -> Option<f64> {
    let (num, den) = cells.iter().fold((0.0, 0.0), |(n, d), c| {
        let w = weighting.weight(c);
        (n + w * c.agreement.unwrap_or(0.0), d + w)
    });
    (den > 0.0).then(|| num / den)
}

pub fn sign_agreement(
    cells: &[AgreementCell],
    weighting: Weighting,
    min_buckets: usize,
) -> Result<AgreementSummary, CalibrateError> {
    let valid = valid_cells(cells, min_buckets);
    if valid.is_empty() {
        return Err(CalibrateError::NoValidCells);
    }
    let pairs: Vec<(f64, f64)> = valid
        .iter()
        .map(|c| (c.agreement.expect("valid"), weighting.weight(c)))
        .collect();
    let pct = |q| weighted_percentile(&pairs, q).expect("non-empty");
    Ok(AgreementSummary {
        cells: valid.len(),
        markets: valid.iter().map(|c| &c.market_id).collect::<HashSet<_>>().len(),
        buckets: valid.iter().map(|c| c.matched_buckets).sum(),
        mean: weighted_mean(&valid, weighting).expect("non-empty"),
        median: pct(0.5),
        p25: pct(0.25),
        p75: pct(0.75),
    })
}

/// Percentile CI of the (weighted) mean agreement, resampling markets.
pub fn agreement_ci(
    cells: &[AgreementCell],
    weighting: Weighting,
    min_buckets: usize,
    resamples: usize,
    seed: u64,
) -> Result<BootstrapCi, CalibrateError> {
    let mut by_market: BTreeMap<&Arc<str>, Vec<&AgreementCell>> = BTreeMap::new();
    for c in valid_cells(cells, min_buckets) {
        by_market.entry(&c.market_id).or_default().push(c);
    }
    let clusters: Vec<Vec<&AgreementCell>> = by_market.into_values().collect();
    Ok(clustered_bootstrap_ci(&clusters, resamples, seed, |sample| {
        let flat: Vec<&AgreementCell> = sample.iter().flat_map(|c| c.iter().copied()).collect();
        weighted_mean(&flat, weighting)
    })?)
}

/// Pooled bucket-level agreement (every signed bucket counts once).
pub fn pooled_agreement(buckets: &[MatchedBucket]) -> Option<(usize, f64)> {
    let signed = buckets.iter().filter(|b| b.is_signed()).count();
    let agree = buckets.iter().filter(|b| b.agrees()).count();
    (signed > 0).then(|| (signed, agree as f64 / signed as f64))
}

/// One market's values of a measure under two sources.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparablePair {
    pub market_id: Arc<str>,
    pub a: f64,
    pub b: f64,
}

impl ComparablePair {
    /// Strictly opposite signs; a zero on either side is not a flip.
    pub fn is_flip(&self) -> bool {
        (self.a > 0.0 && self.b < 0.0) || (self.a < 0.0 && self.b > 0.0)
    }
}

/// Markets where both row sets have a finite value for `measure`, joined on
/// market and token.
pub fn comparable(a: &[MeasureRow], b: &[MeasureRow], measure: &str) -> Vec<ComparablePair> {
    let right: BTreeMap<(&str, &str), f64> = b
        .iter()
        .filter_map(|r| Some(((&*r.market_id, &*r.token_id), r.get(measure).filter(|v| v.is_finite())?)))
        .collect();
    a.iter()
        .filter_map(|r| {
            let x = r.get(measure).filter(|v| v.is_finite())?;
            let y = *right.get(&(&*r.market_id, &*r.token_id))?;
            Some(ComparablePair {
                market_id: r.market_id.clone(),
                a: x,
                b: y,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlipRate {
    pub measure: String,
    pub comparable: usize,
    pub flips: usize,
    pub rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

pub fn sign_flip_rate(a: &[MeasureRow], b: &[MeasureRow], measure: &str) -> Result<FlipRate, CalibrateError> {
    let pairs = comparable(a, b, measure);
    if pairs.is_empty() {
        return Err(CalibrateError::EmptyComparable(measure.to_string()));
    }
    let flips = pairs.iter().filter(|p| p.is_flip()).count();
    let (lo, hi) = wilson_interval(flips as u64, pairs.len() as u64, 0.95);
    Ok(FlipRate {
        measure: measure.to_string(),
        comparable: pairs.len(),
        flips,
        rate: flips as f64 / pairs.len() as f64,
        ci_lo: lo,
        ci_hi: hi,
    })
}

/// Flip rate weighted by `weights[market]` (markets without a weight get 0),
/// with a market-resampling CI.
pub fn volume_weighted_flip(
    a: &[MeasureRow],
    b: &[MeasureRow],
    measure: &str,
    weights: &BTreeMap<Arc<str>, f64>,
    resamples: usize,
    seed: u64,
) -> Result<FlipRate, CalibrateError> {
    let pairs = comparable(a, b, measure);
    if pairs.is_empty() {
        return Err(CalibrateError::EmptyComparable(measure.to_string()));
    }
    let items: Vec<(f64, bool)> = pairs
        .iter()
        .map(|p| (weights.get(&p.market_id).copied().unwrap_or(0.0), p.is_flip()))
        .collect();
    let rate_of = |xs: &[&(f64, bool)]| {
        let den: f64 = xs.iter().map(|x| x.0).sum();
        (den > 0.0).then(|| xs.iter().filter(|x| x.1).fold(0.0, |a, x| a + x.0) / den)
    };
    let refs: Vec<&(f64, bool)> = items.iter().collect();
    let rate = rate_of(&refs).ok_or_else(|| CalibrateError::EmptyComparable(measure.to_string()))?;
    let ci = clustered_bootstrap_ci(&items, resamples, seed, rate_of)?;
    Ok(FlipRate {
        measure: measure.to_string(),
        comparable: pairs.len(),
        flips: items.iter().filter(|x| x.1).count(),
        rate,
        ci_lo: ci.lo,
        ci_hi: ci.hi,
    })
}

pub fn cells_table(cells: &[AgreementCell]) -> Table {
    let mut t = Table::new()
        .with("market_id", Column::Str(cells.iter().map(|c| Some(c.market_id.to_string())).collect()))
        .with("window_id", Column::Str(cells.iter().map(|c| Some(c.window_id.clone())).collect()))
        .with("matched_buckets", Column::I64(cells.iter().map(|c| Some(c.matched_buckets as i64)).collect()))
        .with("signed_buckets", Column::I64(cells.iter().map(|c| Some(c.signed_buckets as i64)).collect()))
        .with("agreeing", Column::I64(cells.iter().map(|c| Some(c.agreeing as i64)).collect()))
        .with("agreement", Column::F64(cells.iter().map(|c| c.agreement).collect()));
    t.set_metadata("schema", "agreement_cell.v1");
    t
}

/// Side-by-side measure values for two sources.
pub fn comparison_table(a: &[MeasureRow], b: &[MeasureRow], measures: &[&str]) -> Table {
    let right: BTreeMap<(&str, &str), &MeasureRow> =
        b.iter().map(|r| ((&*r.market_id, &*r.token_id), r)).collect();
    let joined: Vec<(&MeasureRow, Option<&&MeasureRow>)> = a
        .iter()
        .map(|r| (r, right.get(&(&*r.market_id, &*r.token_id))))
        .collect();
    let mut t = Table::new()
        .with("market_id", Column::Str(joined.iter().map(|(r, _)| Some(r.market_id.to_string())).collect()))
        .with("token_id", Column::Str(joined.iter().map(|(r, _)| Some(r.token_id.to_string())).collect()));
    let (sa, sb) = (
        a.first().map(|r| r.source.as_str()).unwrap_or("a"),
        b.first().map(|r| r.source.as_str()).unwrap_or("b"),
    );
    for m in measures {
        t = t
            .with(&format!("{m}_{sa}"), Column::F64(joined.iter().map(|(r, _)| r.get(m)).collect()))
            .with(&format!("{m}_{sb}"), Column::F64(joined.iter().map(|(_, o)| o.and_then(|r| r.get(m))).collect()));
    }
    t.set_metadata("schema", "measures_compare.v1");
    t
}
