//! Subcommand implementations.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::{json, Value};

use polymicro::calibrate::{
    agreement_cells, agreement_ci, cells_table, comparison_table, pooled_agreement, sign_agreement, sign_flip_rate,
    volume_weighted_flip, weekly_windows, AgreementSummary, Weighting,
};
use polymicro::chain::metadata::{fill_cache, RestMetadata};
use polymicro::chain::{
    assign_block_ts, fills_to_trades, read_fills_dir, BlockAnchor, HttpRpc, MetadataCache,
    ScrapeConfig,
};
use polymicro::feed::live::LiveClient;
use polymicro::feed::{read_archive, sample_all, write_archive, BookEvent, SampledBook};
use polymicro::inference::{infer_all, InferenceRegistry};
use polymicro::io::{sha256_hex, write_atomic, ArtifactRef, Column, Manifest, ManifestLog, Table};
use polymicro::measures::{
    measure_panel, rows_table, sample_step_sweep, table_rows, BookTrades, MeasureParams, MeasureRegistry,
    EFFECTIVE, KYLE_LAMBDA, REALIZED, ROLL, SWEEP_STEPS_SECS,
};
use polymicro::panel::{build_panel as build, market_activity, PanelSpec};
use polymicro::sim::{generate, ScenarioConfig};
use polymicro::stylized::{
    self, sf1_longshot, sf2_depth_ratio, sf3_block_alignment, sf7_wash, sf8_depth_decay, summaries_table,
    summarize_markets, Category, Lexicon, Sf8Spec, SummaryInputs, BLOCK_GRID_MS, BLOCK_TOLERANCE_MS,
    WASH_BUFFER_BLOCKS,
};
use polymicro::trade::{read_trades, trades_table, write_trades, SignedTrade, TradeSource};

use crate::config::RunConfig;
use crate::error::{fail, Kind, Tag};
use crate::{CalibrateArgs, IngestArgs, InferArgs, MeasuresArgs, PanelArgs, ReportArgs, ScrapeArgs, SfArgs, SimulateArgs};

/// Provenance for one command run.
struct Run {
    command: &'static str,
    config: Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    start: Instant,
}

impl Run {
    fn new(command: &'static str, cfg: &RunConfig, args: &impl Serialize) -> Run {
        Run {
            command,
            config: json!({"run": cfg, "args": args}),
            inputs: Vec::new(),
            outputs: Vec::new(),
            start: Instant::now(),
        }
    }

    fn finish(self, cfg: &RunConfig) -> anyhow::Result<()> {
        let refs = |paths: &[PathBuf]| -> anyhow::Result<Vec<ArtifactRef>> {
            let mut v: Vec<ArtifactRef> = paths.iter().map(|p| ArtifactRef::of(p)).collect::<Result<_, _>>().tag(Kind::Io)?;
            v.sort_by(|a, b| a.path.cmp(&b.path));
            v.dedup();
            Ok(v)
        };
        let mut m = Manifest::new(self.command, self.config);
        m.inputs = refs(&self.inputs)?;
        m.outputs = refs(&self.outputs)?;
        m.wall_time_ms = self.start.elapsed().as_millis() as u64;
        let hash = ManifestLog::at(cfg.paths.manifest_log()).append(m).tag(Kind::Io)?;
        tracing::info!(command = self.command, entry = %hash, "manifest appended");
        Ok(())
    }
}

fn parquet_files(dir: &Path) -> Vec<PathBuf> {
    let Ok(rd) = std::fs::read_dir(dir) else {
        return Vec::new();
    };
    let mut v: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "parquet"))
        .collect();
    v.sort();
    v
}

fn load_metadata(cfg: &RunConfig, run: &mut Run) -> anyhow::Result<MetadataCache> {
    let path = cfg.paths.metadata();
    if !path.exists() {
        return Ok(MetadataCache::default());
    }
    run.inputs.push(path.clone());
    MetadataCache::load(&path).tag(Kind::Io)
}

fn load_archive(cfg: &RunConfig, run: &mut Run) -> anyhow::Result<Vec<BookEvent>> {
    let dir = cfg.paths.archive();
    let read = read_archive(&dir).tag(Kind::Feed)?;
    if read.malformed > 0 {
        tracing::warn!(rows = read.malformed, "skipped malformed archive rows");
    }
    run.inputs.extend(read.files);
    Ok(read.events)
}

fn load_onchain(cfg: &RunConfig, meta: &MetadataCache, run: &mut Run) -> anyhow::Result<Vec<SignedTrade>> {
    let dir = cfg.paths.fills();
    let mut fills = if dir.exists() {
        read_fills_dir(&dir).tag(Kind::Chain)?
    } else {
        Vec::new()
    };
    run.inputs.extend(parquet_files(&dir));
    if let (Some(block), Some(ts)) = (cfg.rpc.anchor_block, cfg.rpc.anchor_ts) {
        assign_block_ts(&mut fills, BlockAnchor { block, ts }, polymicro::chain::time::DEFAULT_SECS_PER_BLOCK);
    }
    let (trades, drops) = fills_to_trades(&fills, meta);
    if drops.total() > 0 {
        tracing::warn!(?drops, "fills dropped");
    }
    Ok(trades)
}

fn trades_path(cfg: &RunConfig, source: TradeSource) -> PathBuf {
    let name = match source {
        TradeSource::Onchain => "onchain",
        TradeSource::InferredLoose => "loose",
        TradeSource::InferredStrict => "strict",
    };
    cfg.paths.out_dir.join(format!("trades_{name}.parquet"))
}

fn measures_path(cfg: &RunConfig, source: TradeSource) -> PathBuf {
    cfg.paths.out_dir.join(format!("panel_trade_measures_{}.parquet", source.as_str()))
}

fn parse_source(s: &str) -> anyhow::Result<TradeSource> {
    TradeSource::parse(s).ok_or_else(|| fail(Kind::Config, format!("unknown trade source `{s}`")))
}

fn inferred_source(rule: &str) -> anyhow::Result<TradeSource> {
    match parse_source(rule)? {
        TradeSource::Onchain => Err(fail(Kind::Config, "calibration needs an inference rule")),
        s => Ok(s),
    }
}

/// Keeps YES-token books; books of markets without metadata are kept as they are.
fn is_yes(meta: &MetadataCache, market: &str, token: &str) -> bool {
    meta.market(market).is_none_or(|m| m.yes_token_id == token)
}

fn write_json(path: &Path, v: &Value) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(v).expect("json serializes");
    write_atomic(path, text.as_bytes()).tag(Kind::Io)
}

pub fn ingest_feed(cfg: &RunConfig, a: &IngestArgs) -> anyhow::Result<()> {
    let mut run = Run::new("ingest-feed", cfg, a);
    let mut client = LiveClient::connect(&a.url, &a.assets).tag(Kind::Feed)?;
    let mut events = client.collect(a.max_events).tag(Kind::Feed)?;
    if client.malformed > 0 {
        tracing::warn!(messages = client.malformed, "skipped unmappable messages");
    }
    let _ = client.close();
    if events.is_empty() {
        return Err(fail(Kind::NoEvents, "the feed delivered no book events"));
    }
    events.sort_by_key(|e| e.ts_received);
    run.outputs = write_archive(&cfg.paths.archive(), &events).tag(Kind::Io)?;
    if let Some(base) = &cfg.rpc.metadata_endpoint {
        let mut meta = load_metadata(cfg, &mut run)?;
        let ids: Vec<String> = events
            .iter()
            .map(|e| e.market_id.to_string())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let src = RestMetadata::new(base, Duration::from_secs(20));
        let failed = fill_cache(&mut meta, &ids, &src, cfg.rpc.workers.unwrap_or(8));
        if !failed.is_empty() {
            tracing::warn!(markets = failed.len(), "metadata fetch failed");
        }
        meta.save(&cfg.paths.metadata()).tag(Kind::Io)?;
        run.outputs.push(cfg.paths.metadata());
    }
    run.finish(cfg)
}

pub fn scrape_fills(cfg: &RunConfig, a: &ScrapeArgs) -> anyhow::Result<()> {
    let mut run = Run::new("scrape-fills", cfg, a);
    let url = a
        .rpc
        .clone()
        .or_else(|| cfg.rpc.endpoint.clone())
        .ok_or_else(|| fail(Kind::Config, "no RPC endpoint"))?;
    let exchange = a
        .exchange
        .clone()
        .or_else(|| cfg.rpc.exchange.clone())
        .ok_or_else(|| fail(Kind::Config, "no exchange address"))?;
    let address = polymicro::chain::fill::parse_h160(&exchange)
        .ok_or_else(|| fail(Kind::Config, format!("bad exchange address `{exchange}`")))?;
    let from = a
        .from_block
        .or(cfg.windows.scrape_from_block)
        .ok_or_else(|| fail(Kind::Config, "no start block"))?;
    let to = a
        .to_block
        .or(cfg.windows.scrape_to_block)
        .ok_or_else(|| fail(Kind::Config, "no end block"))?;
    if from > to {
        return Err(fail(Kind::Config, "start block after end block"));
    }
    let mut sc = ScrapeConfig::new(from, to, address, cfg.paths.fills());
    sc.resume = a.resume;
    sc.max_rps = cfg.rpc.max_rps;
    sc.workers = cfg.rpc.workers.unwrap_or(1);
    if let (Some(block), Some(ts)) = (cfg.rpc.anchor_block, cfg.rpc.anchor_ts) {
        sc.anchor = Some(BlockAnchor { block, ts });
    }
    let rpc = HttpRpc::new(&url, Duration::from_secs(60));
    let report = polymicro::chain::scrape_fills(&rpc, &sc).tag(Kind::Chain)?;
    tracing::info!(logs = report.logs, duplicates = report.duplicates_dropped, "scrape finished");
    run.outputs = report.shards_written;
    run.finish(cfg)
}

pub fn build_panel(cfg: &RunConfig, a: &PanelArgs) -> anyhow::Result<()> {
    let mut run = Run::new("build-panel", cfg, a);
    let meta = load_metadata(cfg, &mut run)?;
    let trades = load_onchain(cfg, &meta, &mut run)?;
    if trades.is_empty() {
        return Err(fail(Kind::NoTrades, "no on-chain trades resolve to known markets"));
    }
    let spec = PanelSpec {
        top_n: a.top,
        random_n: a.random,
        min_trades: a.min_trades,
        seed: a.seed.unwrap_or(cfg.seeds.panel),
        window: (
            cfg.windows.panel_start.unwrap_or(i64::MIN),
            cfg.windows.panel_end.unwrap_or(i64::MAX),
        ),
    };
    let activity = market_activity(&trades, spec.window);
    let panel = build(&activity, &meta, &spec).tag(Kind::Panel)?;
    if panel.metadata_miss > 0 {
        tracing::warn!(markets = panel.metadata_miss, "markets without metadata left out");
    }
    let path = cfg.paths.out_dir.join("panel.parquet");
    panel.to_table(&spec).write_parquet(&path).tag(Kind::Io)?;
    let hash_path = cfg.paths.out_dir.join("panel.sha256");
    write_atomic(&hash_path, format!("{}  panel\n", panel.content_hash).as_bytes()).tag(Kind::Io)?;
    run.outputs = vec![path, hash_path];
    run.finish(cfg)
}

pub fn infer(cfg: &RunConfig, a: &InferArgs) -> anyhow::Result<()> {
    let mut run = Run::new("infer", cfg, a);
    let registry = InferenceRegistry::with_defaults(a.lookback);
    let rule = registry.get(&a.rule).ok_or_else(|| {
        fail(
            Kind::Config,
            format!("unknown rule `{}`; registered: {}", a.rule, registry.names().join(", ")),
        )
    })?;
    let events = load_archive(cfg, &mut run)?;
    if events.is_empty() {
        return Err(fail(Kind::NoEvents, "the feed archive is empty"));
    }
    let trades = infer_all(rule, &events);
    let path = trades_path(cfg, rule.source());
    write_trades(&path, &trades).tag(Kind::Io)?;
    run.outputs.push(path);
    run.finish(cfg)
}

fn source_trades(cfg: &RunConfig, source: TradeSource, meta: &MetadataCache, run: &mut Run) -> anyhow::Result<Vec<SignedTrade>> {
    match source {
        TradeSource::Onchain => load_onchain(cfg, meta, run),
        _ => {
            let path = trades_path(cfg, source);
            if !path.exists() {
                return Err(fail(Kind::NoTrades, format!("{} not found; run infer first", path.display())));
            }
            run.inputs.push(path.clone());
            read_trades(&path).tag(Kind::Io)
        }
    }
}

pub fn measures(cfg: &RunConfig, a: &MeasuresArgs) -> anyhow::Result<()> {
    let mut run = Run::new("measures", cfg, a);
    let source = parse_source(&a.source)?;
    let mut registry = MeasureRegistry::with_defaults();
    if !a.measures.is_empty() {
        let names: Vec<&str> = a.measures.iter().map(String::as_str).collect();
        registry = registry.select(&names).map_err(|e| fail(Kind::Config, e))?;
    }
    let meta = load_metadata(cfg, &mut run)?;
    let trades: Vec<SignedTrade> = source_trades(cfg, source, &meta, &mut run)?
        .into_iter()
        .filter(|t| is_yes(&meta, &t.market_id, &t.token_id))
        .collect();
    if trades.is_empty() {
        return Err(fail(Kind::NoTrades, format!("no {source} trades")));
    }
    let events = load_archive(cfg, &mut run)?;
    if events.is_empty() {
        return Err(fail(Kind::NoEvents, "the feed archive is empty"));
    }
    let params = MeasureParams {
        realized_lag_secs: cfg.realized_lag,
        ..MeasureParams::default()
    };
    let step_ms = (cfg.sample_step * 1000.0).round() as i64;
    let books: Vec<SampledBook> = sample_all(&events, step_ms, None)
        .into_iter()
        .filter(|b| is_yes(&meta, &b.market_id, &b.token_id))
        .collect();
    let mut by_book: BTreeMap<(&str, &str), Vec<&SignedTrade>> = BTreeMap::new();
    for t in &trades {
        by_book.entry((&t.market_id, &t.token_id)).or_default().push(t);
    }
    let inputs: Vec<BookTrades<'_>> = books
        .iter()
        .filter_map(|b| {
            let tr = by_book.get(&(&*b.market_id, &*b.token_id))?;
            Some(BookTrades {
                market_id: b.market_id.clone(),
                token_id: b.token_id.clone(),
                mids: &b.series,
                trades: tr.clone(),
            })
        })
        .collect();
    let rows = measure_panel(&registry, source, &inputs, params);
    let path = measures_path(cfg, source);
    rows_table(&rows).write_parquet(&path).tag(Kind::Io)?;
    run.outputs.push(path);
    if a.sweep {
        use rayon::prelude::*;
        let mut lanes: BTreeMap<(&str, &str), Vec<&BookEvent>> = BTreeMap::new();
        for e in &events {
            lanes.entry((&e.market_id, &e.token_id)).or_default().push(e);
        }
        let jobs: Vec<(&Vec<&BookEvent>, &Vec<&SignedTrade>)> = lanes
            .iter()
            .filter_map(|(k, evs)| Some((evs, by_book.get(k)?)))
            .collect();
        let mut sweep: Vec<_> = jobs
            .par_iter()
            .flat_map(|(evs, tr)| sample_step_sweep(&registry, source, evs, tr, &SWEEP_STEPS_SECS, params))
            .collect();
        sweep.sort_by(|x, y| {
            (&x.market_id, &x.token_id)
                .cmp(&(&y.market_id, &y.token_id))
                .then(x.sample_step.total_cmp(&y.sample_step))
        });
        let p = cfg
            .paths
            .out_dir
            .join(format!("panel_trade_measures_{}_sweep.parquet", source.as_str()));
        rows_table(&sweep).write_parquet(&p).tag(Kind::Io)?;
        run.outputs.push(p);
    }
    run.finish(cfg)
}

fn summary_json(s: &AgreementSummary) -> Value {
    json!({
        "cells": s.cells, "markets": s.markets, "buckets": s.buckets,
        "mean": s.mean, "median": s.median, "p25": s.p25, "p75": s.p75,
    })
}

pub fn calibrate(cfg: &RunConfig, a: &CalibrateArgs) -> anyhow::Result<()> {
    let mut run = Run::new("calibrate", cfg, a);
    let source = inferred_source(&a.rule)?;
    let meta = load_metadata(cfg, &mut run)?;
    let inferred = source_trades(cfg, source, &meta, &mut run)?;
    let onchain = load_onchain(cfg, &meta, &mut run)?;
    if onchain.is_empty() {
        return Err(fail(Kind::NoTrades, "no on-chain trades"));
    }
    if inferred.is_empty() {
        return Err(fail(Kind::NoTrades, format!("no {source} trades")));
    }
    let start = cfg.windows.calibration_start.unwrap_or_else(|| {
        let first = onchain.iter().map(|t| t.ts).fold(f64::INFINITY, f64::min);
        (first / 86_400.0).floor() * 86_400.0
    });
    let windows = weekly_windows(start, cfg.windows.calibration_windows.unwrap_or(4));
    // only tokens the feed carries can be matched
    let tokens: HashSet<Arc<str>> = inferred.iter().map(|t| t.token_id.clone()).collect();
    let (cells, buckets) = agreement_cells(&inferred, &onchain, &windows, Some(&tokens));
    let cells_path = cfg.paths.out_dir.join(format!("calibration_cells_{}.parquet", source.as_str()));
    cells_table(&cells).write_parquet(&cells_path).tag(Kind::Io)?;
    run.outputs.push(cells_path);

    let mut summary = json!({
        "rule": a.rule,
        "windows": windows,
        "min_matched_buckets": a.min_buckets,
        "pooled": pooled_agreement(&buckets).map(|(n, r)| json!({"signed_buckets": n, "agreement": r})),
    });
    for (key, w) in [("unweighted", Weighting::Unweighted), ("bucket_weighted", Weighting::BucketCount)] {
        let s = sign_agreement(&cells, w, a.min_buckets).tag(Kind::Calibrate)?;
        let mut v = summary_json(&s);
        match agreement_ci(&cells, w, a.min_buckets, a.resamples, cfg.seeds.bootstrap) {
            Ok(ci) => v["ci95"] = json!([ci.lo, ci.hi]),
            Err(e) => v["ci95_error"] = json!(e.to_string()),
        }
        summary[key] = v;
    }

    // sign flips between on-chain and inferred measures, when both exist
    let (pa, pb) = (measures_path(cfg, TradeSource::Onchain), measures_path(cfg, source));
    if pa.exists() && pb.exists() {
        run.inputs.extend([pa.clone(), pb.clone()]);
        let ra = table_rows(&Table::read_parquet(&pa).tag(Kind::Io)?).tag(Kind::Measures)?;
        let rb = table_rows(&Table::read_parquet(&pb).tag(Kind::Io)?).tag(Kind::Measures)?;
        let mut volume: BTreeMap<Arc<str>, f64> = BTreeMap::new();
        for t in &onchain {
            *volume.entry(t.market_id.clone()).or_default() += t.size_usdc();
        }
        let names = [EFFECTIVE, REALIZED, KYLE_LAMBDA, ROLL];
        let mut flips = serde_json::Map::new();
        for m in names {
            let v = match (
                sign_flip_rate(&ra, &rb, m),
                volume_weighted_flip(&ra, &rb, m, &volume, a.resamples, cfg.seeds.bootstrap),
            ) {
                (Ok(f), vw) => json!({
                    "comparable": f.comparable, "flips": f.flips, "rate": f.rate, "wilson95": [f.ci_lo, f.ci_hi],
                    "volume_weighted": vw.ok().map(|w| json!({"rate": w.rate, "ci95": [w.ci_lo, w.ci_hi]})),
                }),
                (Err(e), _) => json!({"error": e.to_string()}),
            };
            flips.insert(m.to_string(), v);
        }
        summary["sign_flips"] = Value::Object(flips);
        let cmp = cfg.paths.out_dir.join(format!("measure_comparison_{}.parquet", source.as_str()));
        comparison_table(&ra, &rb, &names).write_parquet(&cmp).tag(Kind::Io)?;
        run.outputs.push(cmp);
    }
    let path = cfg.paths.out_dir.join(format!("calibration_{}.json", source.as_str()));
    write_json(&path, &summary)?;
    run.outputs.push(path);
    run.finish(cfg)
}

fn panel_markets(cfg: &RunConfig, run: &mut Run) -> anyhow::Result<Option<HashSet<String>>> {
    let path = cfg.paths.out_dir.join("panel.parquet");
    if !path.exists() {
        return Ok(None);
    }
    run.inputs.push(path.clone());
    let t = Table::read_parquet(&path).tag(Kind::Io)?;
    Ok(Some(t.strs("market_id").tag(Kind::Io)?.iter().flatten().cloned().collect()))
}

fn opt(x: Option<f64>) -> Value {
    x.map_or(Value::Null, |v| json!(v))
}

pub fn stylized(cfg: &RunConfig, a: &SfArgs) -> anyhow::Result<()> {
    let mut run = Run::new("sf", cfg, a);
    let meta = load_metadata(cfg, &mut run)?;
    let mut events = load_archive(cfg, &mut run)?;
    let mut trades = load_onchain(cfg, &meta, &mut run)?;
    if a.panel_only {
        if let Some(keep) = panel_markets(cfg, &mut run)? {
            events.retain(|e| keep.contains(&*e.market_id));
            trades.retain(|t| keep.contains(&*t.market_id));
        }
    }
    if events.is_empty() {
        return Err(fail(Kind::NoEvents, "the feed archive is empty"));
    }
    let step_ms = (cfg.sample_step * 1000.0).round() as i64;
    let books: Vec<SampledBook> = sample_all(&events, step_ms, None)
        .into_iter()
        .filter(|b| is_yes(&meta, &b.market_id, &b.token_id))
        .collect();
    let (lo, hi) = events
        .iter()
        .fold((i64::MAX, i64::MIN), |(l, h), e| (l.min(e.ts_received), h.max(e.ts_received)));
    let midpoint = cfg.windows.sf_midpoint.unwrap_or((lo as f64 + hi as f64) / 2000.0);
    let lexicon = Lexicon::builtin();
    let summaries = summarize_markets(&SummaryInputs {
        books: &books,
        events: &events,
        trades: &trades,
        metadata: &meta,
        lexicon: &lexicon,
        midpoint_ts: midpoint,
    });
    let sum_path = cfg.paths.out_dir.join("market_summary.parquet");
    summaries_table(&summaries, &lexicon.version).write_parquet(&sum_path).tag(Kind::Io)?;
    run.outputs.push(sum_path);

    let sf1: Vec<Value> = sf1_longshot(&summaries)
        .iter()
        .map(|b| json!({"lo": b.lo, "hi": b.hi, "markets": b.markets, "median_bps": opt(b.median), "p25_bps": opt(b.p25), "p75_bps": opt(b.p75)}))
        .collect();
    let sf2 = sf2_depth_ratio(&summaries);
    let ts: Vec<i64> = events.iter().map(|e| e.ts_received).collect();
    let sf3 = sf3_block_alignment(&ts, BLOCK_GRID_MS, BLOCK_TOLERANCE_MS).tag(Kind::Stylized)?;
    let hhi: Vec<f64> = summaries.iter().filter_map(|s| s.maker_hhi).collect();
    let pct = |v: &[f64], q| polymicro::stats::percentile(v, q).ok();
    let mut cats: BTreeMap<Category, usize> = BTreeMap::new();
    for s in &summaries {
        *cats.entry(s.category).or_default() += 1;
    }
    let sf6 = stylized::sf6_latency(events.iter()).tag(Kind::Stylized)?;
    let mut by_market: BTreeMap<&str, Vec<&SignedTrade>> = BTreeMap::new();
    for t in &trades {
        by_market.entry(&t.market_id).or_default().push(t);
    }
    let (mut n, mut flagged, mut vol, mut vol_flagged) = (0usize, 0usize, 0.0, 0.0);
    for tr in by_market.values() {
        let w = sf7_wash(tr, WASH_BUFFER_BLOCKS).tag(Kind::Stylized)?;
        for (t, f) in tr.iter().zip(&w.flagged) {
            n += 1;
            vol += t.size_usdc();
            if *f {
                flagged += 1;
                vol_flagged += t.size_usdc();
            }
        }
    }
    let sf8: Vec<Value> = Sf8Spec::ALL
        .iter()
        .map(|&spec| match sf8_depth_decay(&summaries, spec) {
            Ok(f) => json!({"spec": spec.as_str(), "n": f.n, "slope": f.slope, "hc3_se": f.se, "r_squared": f.r_squared}),
            Err(e) => json!({"spec": spec.as_str(), "error": e.to_string()}),
        })
        .collect();
    let results = json!({
        "markets": summaries.len(),
        "lexicon_version": lexicon.version,
        "midpoint_ts": midpoint,
        "sf1_longshot": sf1,
        "sf2_depth_ratio": {"markets": sf2.ratios.len(), "zero_depth": sf2.zero_depth, "median": opt(sf2.median), "p10": opt(sf2.p10), "p90": opt(sf2.p90)},
        "sf3_block_alignment": {"events": sf3.n, "aligned": sf3.aligned, "share": sf3.share, "null_share": stylized::ALIGNMENT_NULL, "p_value": sf3.p_value, "method": format!("{:?}", sf3.method)},
        "sf4_maker_hhi": {"markets": hhi.len(), "median": opt(pct(&hhi, 0.5)), "p25": opt(pct(&hhi, 0.25)), "p75": opt(pct(&hhi, 0.75))},
        "sf5_categories": cats.iter().map(|(c, k)| json!({"category": c.as_str(), "markets": k})).collect::<Vec<_>>(),
        "sf6_latency_ms": {"events": sf6.n, "negative": sf6.negative, "p50": sf6.p50, "p90": sf6.p90, "p99": sf6.p99},
        "sf7_wash": {"trades": n, "flagged": flagged, "count_share": if n > 0 { flagged as f64 / n as f64 } else { 0.0 }, "volume_share": if vol > 0.0 { vol_flagged / vol } else { 0.0 }},
        "sf8_depth_decay": sf8,
    });
    let path = cfg.paths.out_dir.join("sf_results.json");
    write_json(&path, &results)?;
    run.outputs.push(path);
    run.finish(cfg)
}

pub fn simulate(cfg: &RunConfig, a: &SimulateArgs) -> anyhow::Result<()> {
    let mut run = Run::new("simulate", cfg, a);
    let mut sc = match &a.scenario {
        Some(p) => {
            run.inputs.push(p.clone());
            let text = std::fs::read_to_string(p).map_err(|e| fail(Kind::Config, format!("{}: {e}", p.display())))?;
            ScenarioConfig::from_toml(&text).tag(Kind::Config)?
        }
        None => ScenarioConfig {
            seed: cfg.seeds.simulation,
            ..ScenarioConfig::default()
        },
    };
    if let Some(s) = a.seed {
        sc.seed = s;
    }
    run.config["scenario"] = serde_json::to_value(&sc).expect("scenario serializes");
    let scenario = generate(&sc).tag(Kind::Simulation)?;
    run.outputs = write_archive(&cfg.paths.archive(), &scenario.feed).tag(Kind::Io)?;
    if let (Some(first), Some(last)) = (scenario.fills.first(), scenario.fills.last()) {
        let name = polymicro::chain::scrape::shard_file_name(first.block_number, last.block_number);
        let path = cfg.paths.fills().join(name);
        polymicro::chain::scrape::fills_table(&scenario.fills)
            .write_parquet(&path)
            .tag(Kind::Io)?;
        run.outputs.push(path);
    }
    scenario.metadata().save(&cfg.paths.metadata()).tag(Kind::Io)?;
    run.outputs.push(cfg.paths.metadata());
    let truth = Table::new()
        .with(
            "cause",
            Column::Str(scenario.truth.iter().map(|t| Some(format!("{:?}", t.cause))).collect()),
        )
        .with(
            "sign",
            Column::I64(scenario.truth.iter().map(|t| t.sign.map(|s| s.as_i64())).collect()),
        );
    let tpath = cfg.paths.out_dir.join("sim_truth.parquet");
    truth.write_parquet(&tpath).tag(Kind::Io)?;
    run.outputs.push(tpath);
    let tr = cfg.paths.out_dir.join("trades_onchain.parquet");
    trades_table(&scenario.onchain_trades()).write_parquet(&tr).tag(Kind::Io)?;
    run.outputs.push(tr);
    run.finish(cfg)
}

fn csv_cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Writes an array of objects, or one object, as CSV with sorted columns.
fn write_csv(path: &Path, v: &Value) -> anyhow::Result<()> {
    let rows: Vec<&serde_json::Map<String, Value>> = match v {
        Value::Array(a) => a.iter().filter_map(Value::as_object).collect(),
        Value::Object(o) => vec![o],
        _ => return Ok(()),
    };
    let mut cols: Vec<&String> = rows.iter().flat_map(|r| r.keys()).collect();
    cols.sort();
    cols.dedup();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&cols).tag(Kind::Io)?;
    for r in rows {
        w.write_record(cols.iter().map(|c| r.get(*c).map(csv_cell).unwrap_or_default()))
            .tag(Kind::Io)?;
    }
    let bytes = w.into_inner().map_err(|e| fail(Kind::Io, e))?;
    write_atomic(path, &bytes).tag(Kind::Io)
}

pub fn report(cfg: &RunConfig, a: &ReportArgs) -> anyhow::Result<()> {
    let mut run = Run::new("report", cfg, a);
    let src = cfg.paths.out_dir.join("sf_results.json");
    if !src.exists() {
        return Err(fail(Kind::Io, format!("{} not found; run sf first", src.display())));
    }
    run.inputs.push(src.clone());
    let text = std::fs::read_to_string(&src).tag(Kind::Io)?;
    let v: Value = serde_json::from_str(&text).tag(Kind::Io)?;
    let dir = cfg.paths.out_dir.join("report");
    for (key, val) in v.as_object().into_iter().flatten() {
        if key.starts_with("sf") {
            let p = dir.join(format!("{key}.csv"));
            write_csv(&p, val)?;
            run.outputs.push(p);
        }
    }
    let summary = cfg.paths.out_dir.join("market_summary.parquet");
    if summary.exists() {
        run.inputs.push(summary.clone());
        let t = Table::read_parquet(&summary).tag(Kind::Io)?;
        let p = dir.join("market_summary.csv");
        t.write_csv(&p).tag(Kind::Io)?;
        run.outputs.push(p);
    }
    let digest = sha256_hex(text.as_bytes());
    tracing::info!(%digest, "report rendered");
    run.finish(cfg)
}
