//! `polymicro`: runs the measurement pipeline stage by stage. Every stage
//! writes its artifacts under the output directory and appends a manifest
//! entry to `manifests.jsonl`.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "polymicro", version, about = "Prediction-market microstructure pipeline")]
struct Cli {
    /// Run configuration (TOML). Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    archive_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    fills_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Record the live market channel into the hourly archive.
    IngestFeed(IngestArgs),
    /// Scrape exchange fill logs into block shards.
    ScrapeFills(ScrapeArgs),
    /// Build the stratified market panel.
    BuildPanel(PanelArgs),
    /// Infer trades from the feed archive.
    Infer(InferArgs),
    /// Compute per-market spread and impact measures.
    Measures(MeasuresArgs),
    /// Join inferred trades to on-chain fills and score sign agreement.
    Calibrate(CalibrateArgs),
    /// Compute the panel stylized facts.
    Sf(SfArgs),
    /// Generate a synthetic scenario: feed archive, fill shards, metadata.
    Simulate(SimulateArgs),
    /// Render figure-ready CSVs from the stylized-fact results.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct IngestArgs {
    /// WebSocket market-channel URL.
    #[arg(long)]
    pub url: String,
    /// Asset (token) ids to subscribe to.
    #[arg(long = "asset", required = true)]
    pub assets: Vec<String>,
    #[arg(long, default_value_t = 100_000)]
    pub max_events: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ScrapeArgs {
    #[arg(long)]
    pub rpc: Option<String>,
    #[arg(long)]
    pub exchange: Option<String>,
    #[arg(long)]
    pub from_block: Option<u64>,
    #[arg(long)]
    pub to_block: Option<u64>,
    /// Skip shards already on disk.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct PanelArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 100)]
    pub top: usize,
    #[arg(long, default_value_t = 500)]
    pub random: usize,
    #[arg(long, default_value_t = 100)]
    pub min_trades: u64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct InferArgs {
    /// Registered rule name: loose or strict.
    #[arg(long, default_value = "loose")]
    pub rule: String,
    /// STRICT lookback, in events.
    #[arg(long, default_value_t = polymicro::inference::DEFAULT_LOOKBACK)]
    pub lookback: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct MeasuresArgs {
    /// onchain, loose or strict.
    #[arg(long, default_value = "onchain")]
    pub source: String,
    /// Sample step in seconds; overrides the config.
    #[arg(long)]
    pub step: Option<f64>,
    /// Realized-spread lag in seconds; overrides the config.
    #[arg(long)]
    pub lag: Option<f64>,
    /// Comma-separated subset of registered measures.
    #[arg(long, value_delimiter = ',')]
    pub measures: Vec<String>,
    /// Also recompute at the 1, 10, 60 and 300 s steps.
    #[arg(long)]
    pub sweep: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CalibrateArgs {
    #[arg(long, default_value = "loose")]
    pub rule: String,
    #[arg(long, default_value_t = polymicro::calibrate::MIN_MATCHED_BUCKETS)]
    pub min_buckets: usize,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SfArgs {
    /// Only markets in the panel file, when it exists.
    #[arg(long)]
    pub panel_only: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SimulateArgs {
    /// Scenario file (TOML); defaults apply when absent.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ReportArgs {}

fn effective_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(p) = &cli.out_dir {
        cfg.paths.out_dir = p.clone();
    }
    if let Some(p) = &cli.archive_dir {
        cfg.paths.archive_dir = Some(p.clone());
    }
    if let Some(p) = &cli.fills_dir {
        cfg.paths.fills_dir = Some(p.clone());
    }
    if let Some(p) = &cli.cache_dir {
        cfg.paths.cache_dir = Some(p.clone());
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    cfg.paths.resolve();
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = effective_config(&cli)?;
    if let Some(n) = cfg.threads {
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match cli.command {
        Command::IngestFeed(a) => commands::ingest_feed(&cfg, &a),
        Command::ScrapeFills(a) => commands::scrape_fills(&cfg, &a),
        Command::BuildPanel(a) => commands::build_panel(&cfg, &a),
        Command::Infer(a) => commands::infer(&cfg, &a),
        Command::Measures(a) => {
            if let Some(s) = a.step {
                cfg.sample_step = s;
            }
            if let Some(l) = a.lag {
                cfg.realized_lag = l;
            }
            cfg.validate()?;
            commands::measures(&cfg, &a)
        }
        Command::Calibrate(a) => commands::calibrate(&cfg, &a),
        Command::Sf(a) => commands::stylized(&cfg, &a),
        Command::Simulate(a) => commands::simulate(&cfg, &a),
        Command::Report(a) => commands::report(&cfg, &a),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (line, code) = error::report(&e);
            eprintln!("{line}");
            ExitCode::from(code as u8)
        }
    }
}
