//! Run configuration: one TOML file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{fail, Kind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub windows: Windows,
    /// Book sampling step, seconds.
    pub sample_step: f64,
    /// Realized-spread horizon, seconds.
    pub realized_lag: f64,
    pub seeds: Seeds,
    pub rpc: Rpc,
    /// Worker threads; all cores when unset.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: Paths::default(),
            windows: Windows::default(),
            sample_step: 60.0,
            realized_lag: 60.0,
            seeds: Seeds::default(),
            rpc: Rpc::default(),
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/archive`.
    pub archive_dir: Option<PathBuf>,
    /// Defaults to `<out_dir>/fills`.
    pub fills_dir: Option<PathBuf>,
    /// Defaults to `<out_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            out_dir: PathBuf::from("out"),
            archive_dir: None,
            fills_dir: None,
            cache_dir: None,
        }
    }
}

impl Paths {
    pub fn archive(&self) -> PathBuf {
        self.archive_dir.clone().unwrap_or_else(|| self.out_dir.join("archive"))
    }

    pub fn fills(&self) -> PathBuf {
        self.fills_dir.clone().unwrap_or_else(|| self.out_dir.join("fills"))
    }

    pub fn cache(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.out_dir.join("cache"))
    }

    pub fn metadata(&self) -> PathBuf {
        self.cache().join("metadata.json")
    }

    pub fn manifest_log(&self) -> PathBuf {
        self.out_dir.join("manifests.jsonl")
    }

    /// Fills in the derived directories so the effective config is explicit.
    pub fn resolve(&mut self) {
        self.archive_dir = Some(self.archive());
        self.fills_dir = Some(self.fills());
        self.cache_dir = Some(self.cache());
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Windows {
    pub scrape_from_block: Option<u64>,
    pub scrape_to_block: Option<u64>,
    /// Unix seconds; defaults to the UTC day of the first on-chain trade.
    pub calibration_start: Option<f64>,
    pub calibration_windows: Option<usize>,
    /// Panel activity window, unix seconds, half-open.
    pub panel_start: Option<i64>,
    pub panel_end: Option<i64>,
    /// Reference time for seconds-to-close; defaults to the feed midpoint.
    pub sf_midpoint: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub panel: u64,
    pub bootstrap: u64,
    pub simulation: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            panel: polymicro::panel::DEFAULT_SEED,
            bootstrap: 1,
            simulation: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rpc {
    pub endpoint: Option<String>,
    /// Exchange contract address, hex.
    pub exchange: Option<String>,
    /// Venue REST base for market metadata.
    pub metadata_endpoint: Option<String>,
    pub max_rps: Option<f64>,
    pub workers: Option<usize>,
    /// Known `(block, unix seconds)` pair for timestamp interpolation.
    pub anchor_block: Option<u64>,
    pub anchor_ts: Option<f64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| fail(Kind::Config, format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| fail(Kind::Config, format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(self.sample_step > 0.0 && self.sample_step.is_finite()) {
            return Err(fail(Kind::Config, "sample_step must be positive"));
        }
        if !(self.realized_lag > 0.0 && self.realized_lag.is_finite()) {
            return Err(fail(Kind::Config, "realized_lag must be positive"));
        }
        if let (Some(a), Some(b)) = (self.windows.scrape_from_block, self.windows.scrape_to_block) {
            if a > b {
                return Err(fail(Kind::Config, "scrape_from_block exceeds scrape_to_block"));
            }
        }
        if self.windows.calibration_windows == Some(0) {
            return Err(fail(Kind::Config, "calibration_windows must be at least 1"));
        }
        Ok(())
    }
}
