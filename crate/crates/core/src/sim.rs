//! Synthetic venue with ground truth.
//!
//! Each market has an efficient price on the tick grid with a planted
//! half-spread around it and a ladder of resting levels on both sides. Time
//! advances block by block. In a block at most one action happens: a taker
//! trade, a one-tick efficient-price move, or a cancel-replace of resting
//! size. A trade hits the touch, is recorded as an exchange fill with true
//! maker, taker and asset ids, and appears in the feed only as a resting-size
//! decrement. The quotes then shift by one tick per `1 / impact` USDC traded,
//! plus optional one-tick impact noise.

use std::collections::BTreeMap;
use std::sync::Arc;

use primitive_types::{H160, H256, U256};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain::{interpolate_block_ts, BlockAnchor, MarketMeta, MetadataCache, OnChainFill};
use crate::feed::{BookEvent, BookUpdate, Level};
use crate::stats::rng::labelled_rng;
use crate::trade::SignedTrade;
use crate::units::{Qty, Side, Sign, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WashPattern {
    SelfMatch,
    FlipPair,
    ThreeCycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_markets: usize,
    pub horizon_secs: f64,
    pub block_interval: f64,
    pub genesis_block: u64,
    /// Unix seconds of `genesis_block`.
    pub genesis_ts: f64,
    pub maker_count: usize,
    /// Zipf exponent of maker volume shares.
    pub maker_skew: f64,
    pub taker_count: usize,
    pub half_spread: f64,
    /// Per-market half-spread is drawn uniformly within this many ticks of the planted value.
    pub half_spread_jitter_ticks: u32,
    /// Mid move per USDC of signed flow, in probability.
    pub impact: f64,
    pub max_lots: u32,
    /// Probability that a trade's quote shift gets an extra tick up or down.
    pub impact_noise: f64,
    /// Probability of a one-tick efficient-price move in a block without a trade.
    pub mid_move_rate: f64,
    pub wash_rate: f64,
    pub wash_pattern: WashPattern,
    pub cancel_replace_rate: f64,
    /// Taker arrivals per second.
    pub taker_rate: f64,
    pub buy_probability: f64,
    pub depth_levels: u32,
    /// Mean resting size per level, tokens.
    pub level_size: u64,
    pub latency_ms: (i64, i64),
    pub ingest_delay_ms: (i64, i64),
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 1,
            n_markets: 4,
            horizon_secs: 4.0 * 3600.0,
            block_interval: 2.0,
            genesis_block: 80_000_000,
            genesis_ts: 1_772_236_800.0,
            maker_count: 5,
            maker_skew: 1.0,
            taker_count: 500,
            half_spread: 0.01,
            half_spread_jitter_ticks: 1,
            impact: 1e-4,
            max_lots: 3,
            impact_noise: 0.5,
            mid_move_rate: 0.3,
            wash_rate: 0.0,
            wash_pattern: WashPattern::SelfMatch,
            cancel_replace_rate: 0.0,
            taker_rate: 0.35,
            buy_probability: 0.5,
            depth_levels: 10,
            level_size: 5_000,
            latency_ms: (50, 800),
            ingest_delay_ms: (5, 80),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    ConfigInvalid(String),
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<ScenarioConfig, SimError> {
        let c: ScenarioConfig = toml::from_str(text).map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn half_spread_ticks(&self) -> u32 {
        (self.half_spread * 1000.0).round() as u32
    }

    /// USDC that moves the quotes by one tick.
    pub fn lot_usdc(&self) -> f64 {
        0.001 / self.impact
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::ConfigInvalid(m.to_string()));
        for (name, r) in [
            ("wash_rate", self.wash_rate),
            ("cancel_replace_rate", self.cancel_replace_rate),
            ("buy_probability", self.buy_probability),
            ("impact_noise", self.impact_noise),
            ("mid_move_rate", self.mid_move_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if !(self.half_spread > 0.0 && self.half_spread < 0.5) {
            return bad("half_spread must lie in (0, 0.5)");
        }
        let h = self.half_spread_ticks();
        if h <= self.half_spread_jitter_ticks || (self.half_spread * 1000.0 - f64::from(h)).abs() > 1e-9 {
            return bad("half_spread must be a whole number of ticks larger than the jitter");
        }
        if !(self.horizon_secs > 0.0) || !(self.block_interval > 0.0) {
            return bad("horizon and block interval must be positive");
        }
        if !(self.impact > 0.0) {
            return bad("impact must be positive");
        }
        let lot = self.lot_usdc() * 1e6;
        if (lot - lot.round()).abs() > 1e-6 || lot < 1.0 {
            return bad("1 / impact must be a whole number of micro-USDC");
        }
        if self.max_lots == 0 || self.max_lots + 1 >= 2 * (h - self.half_spread_jitter_ticks) {
            return bad("max_lots must be positive and smaller than the spread in ticks");
        }
        if self.depth_levels < 2 || self.level_size == 0 {
            return bad("need at least two levels of positive size");
        }
        if self.maker_count == 0 || self.taker_count == 0 || self.n_markets == 0 {
            return bad("need makers, takers and markets");
        }
        if self.taker_rate < 0.0 || self.maker_skew < 0.0 {
            return bad("rates must be non-negative");
        }
        if self.latency_ms.0 < 1 || self.latency_ms.1 < self.latency_ms.0 || self.ingest_delay_ms.1 < self.ingest_delay_ms.0 {
            return bad("latency ranges must be ordered and positive");
        }
        if self.latency_ms.1 as f64 >= self.block_interval * 1000.0 {
            return bad("feed latency must be shorter than a block");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventCause {
    Snapshot,
    Trade,
    /// Top-up of a level too thin for the incoming trade.
    Refill,
    Shift,
    CancelReplace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventTruth {
    pub cause: EventCause,
    /// `(tx_hash, log_index)` of the fill behind a trade decrement.
    pub fill: Option<(H256, u64)>,
    pub sign: Option<Sign>,
}

pub struct Scenario {
    pub config: ScenarioConfig,
    pub markets: Vec<MarketMeta>,
    pub fills: Vec<OnChainFill>,
    pub feed: Vec<BookEvent>,
    /// Parallel to `feed`.
    pub truth: Vec<EventTruth>,
    pub anchor: BlockAnchor,
    pub exchange: H160,
}

impl Scenario {
    pub fn is_trade(&self) -> Vec<bool> {
        self.truth.iter().map(|t| t.cause == EventCause::Trade).collect()
    }

    pub fn metadata(&self) -> MetadataCache {
        MetadataCache::new(self.markets.iter().cloned())
    }

    /// The fills as on-chain trades.
    pub fn onchain_trades(&self) -> Vec<SignedTrade> {
        crate::chain::fills_to_trades(&self.fills, &self.metadata()).0
    }
}

fn digest(label: &str, seed: u64, a: u64, b: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    h.update(seed.to_le_bytes());
    h.update(a.to_le_bytes());
    h.update(b.to_le_bytes());
    h.finalize().into()
}

fn address(label: &str, seed: u64, market: u64, i: u64) -> H160 {
    H160::from_slice(&digest(label, seed, market, i)[..20])
}

const QUESTIONS: [&str; 8] = [
    "Will Bitcoin close above ${} on the last day of the month?",
    "Will the Lakers win game {} of the series?",
    "Will Ethereum trade above ${} by Friday?",
    "Will the ceasefire hold through week {}?",
    "Will the Fed cut rates at meeting {}?",
    "Will the film gross over ${} million on opening weekend?",
    "Will Arsenal score more than {} goals this weekend?",
    "Will the city record more than {} inches of snow?",
];

fn market_meta(cfg: &ScenarioConfig, m: u64, rng: &mut ChaCha20Rng) -> (MarketMeta, U256, U256) {
    let cond = H256(digest("sim-condition", cfg.seed, m, 0));
    let yes = U256::from_big_endian(&digest("sim-token", cfg.seed, m, 0));
    let no = U256::from_big_endian(&digest("sim-token", cfg.seed, m, 1));
    let q = QUESTIONS[rng.random_range(0..QUESTIONS.len())].replace("{}", &rng.random_range(2..200).to_string());
    let end = cfg.genesis_ts + cfg.horizon_secs + rng.random_range(1..120) as f64 * 86_400.0;
    let end_iso = chrono::DateTime::from_timestamp(end as i64, 0)
        .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string());
    (
        MarketMeta {
            condition_id: crate::chain::fill::h256_hex(&cond),
            yes_token_id: yes.to_string(),
            no_token_id: no.to_string(),
            question: q,
            end_date_iso: end_iso,
            closed: false,
        },
        yes,
        no,
    )
}

struct MarketSim<'a> {
    cfg: &'a ScenarioConfig,
    rng: ChaCha20Rng,
    market_id: Arc<str>,
    token_id: Arc<str>,
    yes: U256,
    bids: BTreeMap<u32, u64>,
    asks: BTreeMap<u32, u64>,
    /// Best bid and best ask in ticks.
    bid: u32,
    ask: u32,
    events: Vec<(BookEvent, EventTruth)>,
    fills: Vec<OnChainFill>,
    ts_ms: i64,
}

impl MarketSim<'_> {
    fn level_size(&mut self) -> u64 {
        let s = self.cfg.level_size;
        self.rng.random_range(s / 2 + 1..=s + s / 2) * 1_000_000
    }

    fn emit(&mut self, side: Side, price: u32, size: u64, cause: EventCause, fill: Option<(H256, u64)>, sign: Option<Sign>) {
        let book = match side {
            Side::Bid => &mut self.bids,
            Side::Ask => &mut self.asks,
        };
        if size == 0 {
            book.remove(&price);
        } else {
            book.insert(price, size);
        }
        let (lo, hi) = self.cfg.ingest_delay_ms;
        let created = self.ts_ms + self.rng.random_range(lo..=hi);
        self.events.push((
            BookEvent {
                market_id: self.market_id.clone(),
                token_id: self.token_id.clone(),
                update: BookUpdate::Delta {
                    side,
                    level: Level::new(Tick::new(price).expect("price on grid"), Qty::from_base(size)),
                },
                ts_received: self.ts_ms,
                ts_created: created,
            },
            EventTruth { cause, fill, sign },
        ));
    }

    fn snapshot(&mut self) {
        let ladder = |m: &BTreeMap<u32, u64>| -> Vec<Level> {
            m.iter()
                .map(|(&p, &s)| Level::new(Tick::new(p).expect("on grid"), Qty::from_base(s)))
                .collect()
        };
        let ev = BookEvent {
            market_id: self.market_id.clone(),
            token_id: self.token_id.clone(),
            update: BookUpdate::Snapshot {
                bids: Some(ladder(&self.bids)),
                asks: Some(ladder(&self.asks)),
            },
            ts_received: self.ts_ms,
            ts_created: self.ts_ms + self.cfg.ingest_delay_ms.0,
        };
        self.events.push((
            ev,
            EventTruth {
                cause: EventCause::Snapshot,
                fill: None,
                sign: None,
            },
        ));
    }

    /// Moves both quotes by `s` ticks, keeping the ladder depth.
    fn shift(&mut self, s: i32, cause: EventCause) {
        let d = self.cfg.depth_levels;
        let n = s.unsigned_abs();
        if n == 0 {
            return;
        }
        if s > 0 {
            for k in 1..=n {
                let size = self.level_size();
                self.emit(Side::Bid, self.bid + k, size, cause, None, None);
            }
            for k in 0..n {
                self.emit(Side::Ask, self.ask + k, 0, cause, None, None);
            }
            for k in 0..n {
                let size = self.level_size();
                self.emit(Side::Ask, self.ask + d + k, size, cause, None, None);
            }
            for k in 0..n {
                self.emit(Side::Bid, self.bid + 1 + k - d, 0, cause, None, None);
            }
            self.bid += n;
            self.ask += n;
        } else {
            for k in 1..=n {
                let size = self.level_size();
                self.emit(Side::Ask, self.ask - k, size, cause, None, None);
            }
            for k in 0..n {
                self.emit(Side::Bid, self.bid - k, 0, cause, None, None);
            }
            for k in 0..n {
                let size = self.level_size();
                self.emit(Side::Bid, self.bid - d - k, size, cause, None, None);
            }
            for k in 0..n {
                self.emit(Side::Ask, self.ask + d - 1 - k, 0, cause, None, None);
            }
            self.bid -= n;
            self.ask -= n;
        }
    }

    fn mid2(&self) -> i64 {
        i64::from(self.bid + self.ask)
    }

    /// Keeps the whole ladder inside the price grid.
    fn clamp_shift(&self, s: i32) -> i32 {
        let d = self.cfg.depth_levels as i32;
        let lo = d - self.bid as i32;
        let hi = 1000 - d - self.ask as i32;
        s.clamp(lo, hi)
    }
}

struct Wallets {
    makers: Vec<H160>,
    maker_weights: WeightedIndex<f64>,
    takers: Vec<H160>,
}

enum WashLeg {
    FlipSecond { maker: H160, taker: H160, by_block: u64 },
    Cycle { legs: Vec<(H160, H160)> },
}

fn simulate_market(cfg: &ScenarioConfig, m: u64, n_blocks: u64) -> (MarketMeta, Vec<(BookEvent, EventTruth)>, Vec<OnChainFill>) {
    let mut rng = labelled_rng("sim-market", cfg.seed, m);
    let (meta, yes, _no) = market_meta(cfg, m, &mut rng);
    let h = cfg.half_spread_ticks();
    let j = cfg.half_spread_jitter_ticks;
    let hm = rng.random_range(h - j..=h + j);
    let center = rng.random_range(350..=650u32);
    let wallets = Wallets {
        makers: (0..cfg.maker_count as u64).map(|i| address("sim-maker", cfg.seed, m, i)).collect(),
        maker_weights: WeightedIndex::new((0..cfg.maker_count).map(|i| 1.0 / ((i + 1) as f64).powf(cfg.maker_skew)))
            .expect("positive weights"),
        takers: (0..cfg.taker_count as u64).map(|i| address("sim-taker", cfg.seed, m, i)).collect(),
    };
    let mut sim = MarketSim {
        cfg,
        rng,
        market_id: Arc::from(meta.condition_id.as_str()),
        token_id: Arc::from(meta.yes_token_id.as_str()),
        yes,
        bids: BTreeMap::new(),
        asks: BTreeMap::new(),
        bid: center - hm,
        ask: center + hm,
        events: Vec::new(),
        fills: Vec::new(),
        ts_ms: (cfg.genesis_ts * 1000.0).round() as i64 - 1000,
    };
    for k in 0..cfg.depth_levels {
        let (b, a) = (sim.level_size(), sim.level_size());
        sim.bids.insert(sim.bid - k, b);
        sim.asks.insert(sim.ask + k, a);
    }
    sim.snapshot();

    let p_trade = 1.0 - (-cfg.taker_rate * cfg.block_interval).exp();
    let lot_micro = (cfg.lot_usdc() * 1e6).round() as u64;
    let anchor = BlockAnchor {
        block: cfg.genesis_block,
        ts: cfg.genesis_ts,
    };
    let mut wash_queue: Option<WashLeg> = None;
    let mut wash_counter = 0u64;
    for blk in 0..n_blocks {
        let block = cfg.genesis_block + blk;
        let block_ts = interpolate_block_ts(block, anchor, cfg.block_interval).expect("after anchor");
        let (lo, hi) = cfg.latency_ms;
        sim.ts_ms = (block_ts * 1000.0).round() as i64 + sim.rng.random_range(lo..=hi);
        let u: f64 = sim.rng.random();
        if u < p_trade {
            let buy = sim.rng.random::<f64>() < cfg.buy_probability;
            let lots = sim.rng.random_range(1..=cfg.max_lots);
            let (maker, taker) = match wash_queue.take() {
                Some(WashLeg::FlipSecond { maker, taker, by_block }) if block <= by_block => (maker, taker),
                Some(WashLeg::Cycle { mut legs }) => {
                    let leg = legs.remove(0);
                    if !legs.is_empty() {
                        wash_queue = Some(WashLeg::Cycle { legs });
                    }
                    leg
                }
                _ => {
                    let maker = wallets.makers[wallets.maker_weights.sample(&mut sim.rng)];
                    let taker = wallets.takers[sim.rng.random_range(0..wallets.takers.len())];
                    if sim.rng.random::<f64>() < cfg.wash_rate {
                        wash_counter += 1;
                        match cfg.wash_pattern {
                            WashPattern::SelfMatch => (maker, maker),
                            WashPattern::FlipPair => {
                                wash_queue = Some(WashLeg::FlipSecond {
                                    maker: taker,
                                    taker: maker,
                                    by_block: block + 128,
                                });
                                (maker, taker)
                            }
                            WashPattern::ThreeCycle => {
                                let w = |i| address("sim-wash", cfg.seed, m, wash_counter * 3 + i);
                                let (a, b, c) = (w(0), w(1), w(2));
                                wash_queue = Some(WashLeg::Cycle {
                                    legs: vec![(b, c), (c, a)],
                                });
                                (a, b)
                            }
                        }
                    } else {
                        (maker, taker)
                    }
                }
            };
            let (side, price) = if buy { (Side::Ask, sim.ask) } else { (Side::Bid, sim.bid) };
            let usdc_micro = u64::from(lots) * lot_micro;
            let token_micro = ((u128::from(usdc_micro) * 1000 + u128::from(price) / 2) / u128::from(price)) as u64;
            let resting = match side {
                Side::Bid => sim.bids[&price],
                Side::Ask => sim.asks[&price],
            };
            let resting = if resting < token_micro {
                let top = resting + token_micro + sim.level_size();
                sim.emit(side, price, top, EventCause::Refill, None, None);
                top
            } else {
                resting
            };
            let key = (H256(digest("sim-tx", cfg.seed, m, blk)), m);
            let token = sim.yes;
            let fill = OnChainFill {
                tx_hash: key.0,
                log_index: key.1,
                order_hash: H256(digest("sim-order", cfg.seed, m, blk)),
                maker,
                taker,
                maker_asset_id: if buy { token } else { U256::zero() },
                taker_asset_id: if buy { U256::zero() } else { token },
                maker_amount: U256::from(if buy { token_micro } else { usdc_micro }),
                taker_amount: U256::from(if buy { usdc_micro } else { token_micro }),
                fee: U256::zero(),
                block_number: block,
                block_ts: Some(block_ts),
            };
            sim.fills.push(fill);
            let sign = if buy { Sign::Buy } else { Sign::Sell };
            sim.emit(side, price, resting - token_micro, EventCause::Trade, Some(key), Some(sign));
            let noise = if sim.rng.random::<f64>() < cfg.impact_noise {
                if sim.rng.random::<bool>() { 1 } else { -1 }
            } else {
                0
            };
            let s = sign.as_i64() as i32 * lots as i32 + noise;
            let s = sim.clamp_shift(s);
            sim.shift(s, EventCause::Shift);
        } else if u < p_trade + (1.0 - p_trade) * cfg.mid_move_rate {
            // drifts back toward the initial center
            let pull = (f64::from(center) * 2.0 - sim.mid2() as f64) / 600.0;
            let up = sim.rng.random::<f64>() < (0.5 + pull).clamp(0.05, 0.95);
            let s = sim.clamp_shift(if up { 1 } else { -1 });
            sim.shift(s, EventCause::Shift);
        } else if sim.rng.random::<f64>() < cfg.cancel_replace_rate {
            let side = if sim.rng.random::<bool>() { Side::Bid } else { Side::Ask };
            let (best, book) = match side {
                Side::Bid => (sim.bid, &sim.bids),
                Side::Ask => (sim.ask, &sim.asks),
            };
            let size = book[&best];
            let whole = size / 1_000_000;
            if whole >= 4 {
                let x = sim.rng.random_range(whole / 10 + 1..=whole / 2) * 1_000_000;
                let depth = sim.rng.random_range(1..cfg.depth_levels);
                let deeper = match side {
                    Side::Bid => best - depth,
                    Side::Ask => best + depth,
                };
                let prior = book.get(&deeper).copied().unwrap_or(0);
                if sim.rng.random::<bool>() {
                    sim.emit(side, best, size - x, EventCause::CancelReplace, None, None);
                    sim.emit(side, deeper, prior + x, EventCause::CancelReplace, None, None);
                } else {
                    sim.emit(side, deeper, prior + x, EventCause::CancelReplace, None, None);
                    sim.emit(side, best, size - x, EventCause::CancelReplace, None, None);
                }
            }
        }
    }
    (meta, sim.events, sim.fills)
}

/// Runs a scenario. Markets are simulated independently from seeded streams.
pub fn generate(config: &ScenarioConfig) -> Result<Scenario, SimError> {
    config.validate()?;
    let n_blocks = (config.horizon_secs / config.block_interval).floor() as u64;
    let mut markets = Vec::with_capacity(config.n_markets);
    let mut tagged: Vec<(usize, BookEvent, EventTruth)> = Vec::new();
    let mut fills = Vec::new();
    for m in 0..config.n_markets {
        let (meta, events, f) = simulate_market(config, m as u64, n_blocks);
        markets.push(meta);
        tagged.extend(events.into_iter().map(|(e, t)| (m, e, t)));
        fills.extend(f);
    }
    // stable: events of one market in one block keep their order
    tagged.sort_by_key(|(m, e, _)| (e.ts_received, *m));
    fills.sort_by_key(|f| (f.block_number, f.log_index));
    let (feed, truth) = tagged.into_iter().map(|(_, e, t)| (e, t)).unzip();
    Ok(Scenario {
        config: config.clone(),
        markets,
        fills,
        feed,
        truth,
        anchor: BlockAnchor {
            block: config.genesis_block,
            ts: config.genesis_ts,
        },
        exchange: address("sim-exchange", 0, 0, 0),
    })
}
