//! Hourly columnar feed archive.
//!
//! One file per UTC hour of `timestamp_received`, named `YYYY-MM-DDTHH.parquet`,
//! with one row per event and the payload kept as a JSON string.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};

use super::event::{parse_data_str, BookEvent};
use crate::io::{Column, Table, TableError};

pub const ARCHIVE_COLUMNS: [&str; 6] = [
    "market_id",
    "token_id",
    "event_type",
    "data",
    "timestamp_received",
    "timestamp_created_at",
];

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("timestamp {0} ms is outside the representable range")]
    BadTimestamp(i64),
}

/// Archive file name for the hour containing `ts_ms`.
pub fn hour_file_name(ts_ms: i64) -> Result<String, ArchiveError> {
    let dt: DateTime<Utc> =
        DateTime::from_timestamp_millis(ts_ms).ok_or(ArchiveError::BadTimestamp(ts_ms))?;
    Ok(format!("{}.parquet", dt.format("%Y-%m-%dT%H")))
}

/// Events in archive column layout.
pub fn events_table(events: &[&BookEvent]) -> Table {
    Table::new()
        .with(
            "market_id",
            Column::Str(events.iter().map(|e| Some(e.market_id.to_string())).collect()),
        )
        .with(
            "token_id",
            Column::Str(events.iter().map(|e| Some(e.token_id.to_string())).collect()),
        )
        .with(
            "event_type",
            Column::Str(events.iter().map(|e| Some(e.event_type().to_string())).collect()),
        )
        .with(
            "data",
            Column::Str(events.iter().map(|e| Some(e.data_json())).collect()),
        )
        .with(
            "timestamp_received",
            Column::I64(events.iter().map(|e| Some(e.ts_received)).collect()),
        )
        .with(
            "timestamp_created_at",
            Column::I64(events.iter().map(|e| Some(e.ts_created)).collect()),
        )
}

/// Writes `events` into hourly files under `dir`, keeping arrival order inside
/// each file. Returns the written paths in name order.
pub fn write_archive(dir: &Path, events: &[BookEvent]) -> Result<Vec<PathBuf>, ArchiveError> {
    fs::create_dir_all(dir).map_err(|source| ArchiveError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut hours: BTreeMap<String, Vec<&BookEvent>> = BTreeMap::new();
    for ev in events {
        hours.entry(hour_file_name(ev.ts_received)?).or_default().push(ev);
    }
    let mut paths = Vec::with_capacity(hours.len());
    for (name, evs) in hours {
        let path = dir.join(name);
        events_table(&evs).write_parquet(&path)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Outcome of reading an archive.
#[derive(Debug, Default)]
pub struct ArchiveRead {
    pub events: Vec<BookEvent>,
    pub files: Vec<PathBuf>,
    /// Rows whose payload failed to parse; they are skipped.
    pub malformed: usize,
}

/// Lists `*.parquet` files in `dir` in name (= time) order.
pub fn archive_files(dir: &Path) -> Result<Vec<PathBuf>, ArchiveError> {
    let rd = fs::read_dir(dir).map_err(|source| ArchiveError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "parquet"))
        .collect();
    files.sort();
    Ok(files)
}

/// Reads every hourly file in `dir`, concatenating rows in file order.
pub fn read_archive(dir: &Path) -> Result<ArchiveRead, ArchiveError> {
    let mut out = ArchiveRead::default();
    for path in archive_files(dir)? {
        let table = Table::read_parquet(&path)?;
        out.malformed += rows_to_events(&table, &mut out.events)?;
        out.files.push(path);
    }
    Ok(out)
}

/// Appends the events of an archive table to `out`; returns the count of rows skipped.
pub fn rows_to_events(table: &Table, out: &mut Vec<BookEvent>) -> Result<usize, ArchiveError> {
    let market = table.strs("market_id")?;
    let token = table.strs("token_id")?;
    let kind = table.strs("event_type")?;
    let data = table.strs("data")?;
    let recv = table.i64s("timestamp_received")?;
    let created = table.i64s("timestamp_created_at")?;
    let mut interned: BTreeMap<String, Arc<str>> = BTreeMap::new();
    let mut intern = |s: &str| -> Arc<str> {
        if let Some(a) = interned.get(s) {
            return a.clone();
        }
        let a: Arc<str> = Arc::from(s);
        interned.insert(s.to_string(), a.clone());
        a
    };
    let mut skipped = 0;
    for i in 0..table.num_rows() {
        let (Some(m), Some(t), Some(k), Some(d), Some(r), Some(c)) = (
            market[i].as_deref(),
            token[i].as_deref(),
            kind[i].as_deref(),
            data[i].as_deref(),
            recv[i],
            created[i],
        ) else {
            skipped += 1;
            continue;
        };
        match parse_data_str(k, d) {
            Ok(update) => out.push(BookEvent {
                market_id: intern(m),
                token_id: intern(t),
                update,
                ts_received: r,
                ts_created: c,
            }),
            Err(e) => {
                tracing::debug!(row = i, error = %e, "skipping malformed archive row");
                skipped += 1;
            }
        }
    }
    Ok(skipped)
}
