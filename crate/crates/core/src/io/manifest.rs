//! Run manifests and the hash-chained manifest log.
//!
//! Each CLI run records the SHA-256 of every input and output artifact, the
//! effective configuration, and the code version. Manifests are appended to a
//! JSON-lines log in which every entry carries the hash of its predecessor.

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest log line {line}: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("manifest chain broken at entry {0}")]
    BrokenChain(usize),
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, ManifestError> {
    let bytes = fs::read(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(sha256_hex(&bytes))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl ArtifactRef {
    pub fn of(path: &Path) -> Result<ArtifactRef, ManifestError> {
        let bytes = fs::read(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(ArtifactRef {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub code_version: String,
    pub config_hash: String,
    pub effective_config: serde_json::Value,
    pub inputs: Vec<ArtifactRef>,
    pub outputs: Vec<ArtifactRef>,
    pub wall_time_ms: u64,
    /// Hash of the previous entry in the log, empty for the first.
    #[serde(default)]
    pub prev_entry: String,
}

impl Manifest {
    pub fn new(command: &str, effective_config: serde_json::Value) -> Manifest {
        let config_hash = sha256_hex(effective_config.to_string().as_bytes());
        Manifest {
            command: command.to_string(),
            code_version: CODE_VERSION.to_string(),
            config_hash,
            effective_config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_time_ms: 0,
            prev_entry: String::new(),
        }
    }

    pub fn entry_hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("manifest serializes").as_bytes())
    }
}

/// Append-only JSON-lines manifest log.
pub struct ManifestLog {
    path: PathBuf,
}

impl ManifestLog {
    pub fn at(path: impl Into<PathBuf>) -> ManifestLog {
        ManifestLog { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn entries(&self) -> Result<Vec<Manifest>, ManifestError> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        let f = fs::File::open(&self.path).map_err(|source| ManifestError::Io {
            path: self.path.clone(),
            source,
        })?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|source| ManifestError::Io {
                path: self.path.clone(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(
                serde_json::from_str(&line)
                    .map_err(|source| ManifestError::Malformed { line: i + 1, source })?,
            );
        }
        Ok(out)
    }

    /// Links `manifest` to the current tail and appends it. Returns its entry hash.
    pub fn append(&self, mut manifest: Manifest) -> Result<String, ManifestError> {
        manifest.prev_entry = self
            .entries()?
            .last()
            .map(Manifest::entry_hash)
            .unwrap_or_default();
        let hash = manifest.entry_hash();
        if let Some(dir) = self.path.parent() {
            fs::create_dir_all(dir).map_err(|source| ManifestError::Io {
                path: dir.to_path_buf(),
                source,
            })?;
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|source| ManifestError::Io {
                path: self.path.clone(),
                source,
            })?;
        writeln!(f, "{}", serde_json::to_string(&manifest).expect("manifest serializes"))
            .map_err(|source| ManifestError::Io {
                path: self.path.clone(),
                source,
            })?;
        Ok(hash)
    }

    pub fn verify(&self) -> Result<usize, ManifestError> {
        let entries = self.entries()?;
        let mut prev = String::new();
        for (i, e) in entries.iter().enumerate() {
            if e.prev_entry != prev {
                return Err(ManifestError::BrokenChain(i));
            }
            prev = e.entry_hash();
        }
        Ok(entries.len())
    }
}
