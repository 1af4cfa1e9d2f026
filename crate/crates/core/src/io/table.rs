//! Minimal column-oriented table with Parquet and CSV serialization.
//!
//! Every artifact this crate reads or writes (hourly feed archives, fill
//! shards, measure panels) goes through [`Table`]. Columns are nullable and
//! typed as one of four physical kinds; writes are deterministic so that two
//! runs over the same inputs produce byte-identical files.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use parquet::basic::{Compression, Encoding};
use parquet::column::reader::ColumnReader;
use parquet::data_type::{BoolType, ByteArray, ByteArrayType, DoubleType, Int64Type};
use parquet::file::metadata::KeyValue;
use parquet::file::properties::{EnabledStatistics, WriterProperties};
use parquet::file::reader::{FileReader, SerializedFileReader};
use parquet::file::writer::SerializedFileWriter;
use parquet::schema::parser::parse_message_type;

const CREATED_BY: &str = "polymicro";
const READ_BATCH: usize = 8192;

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parquet error: {0}")]
    Parquet(#[from] parquet::errors::ParquetError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("column `{name}` has {got} rows, table has {expected}")]
    LengthMismatch {
        name: String,
        got: usize,
        expected: usize,
    },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("column `{name}` is not of type {expected}")]
    WrongType { name: String, expected: &'static str },
    #[error("unsupported physical type for column `{0}`")]
    Unsupported(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TableError + '_ {
    move |source| TableError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One nullable column.
#[derive(Clone, Debug, PartialEq)]
pub enum Column {
    I64(Vec<Option<i64>>),
    F64(Vec<Option<f64>>),
    Str(Vec<Option<String>>),
    Bool(Vec<Option<bool>>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::I64(v) => v.len(),
            Column::F64(v) => v.len(),
            Column::Str(v) => v.len(),
            Column::Bool(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn parquet_decl(&self, name: &str) -> String {
        match self {
            Column::I64(_) => format!("OPTIONAL INT64 {name};"),
            Column::F64(_) => format!("OPTIONAL DOUBLE {name};"),
            Column::Str(_) => format!("OPTIONAL BYTE_ARRAY {name} (UTF8);"),
            Column::Bool(_) => format!("OPTIONAL BOOLEAN {name};"),
        }
    }

    fn render(&self, row: usize) -> String {
        match self {
            Column::I64(v) => v[row].map(|x| x.to_string()).unwrap_or_default(),
            Column::F64(v) => v[row].map(format_f64).unwrap_or_default(),
            Column::Str(v) => v[row].clone().unwrap_or_default(),
            Column::Bool(v) => v[row].map(|x| x.to_string()).unwrap_or_default(),
        }
    }
}

/// Shortest round-trip representation; NaN never reaches a table (encoded as null).
fn format_f64(x: f64) -> String {
    format!("{x:?}")
}

fn def_levels<T>(values: &[Option<T>]) -> Vec<i16> {
    values.iter().map(|v| i16::from(v.is_some())).collect()
}

/// A named set of equal-length columns plus string metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    names: Vec<String>,
    columns: Vec<Column>,
    metadata: BTreeMap<String, String>,
}

impl Table {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_rows(&self) -> usize {
        self.columns.first().map_or(0, Column::len)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn set_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn push(&mut self, name: impl Into<String>, column: Column) -> Result<(), TableError> {
        let name = name.into();
        if let Some(first) = self.columns.first() {
            if first.len() != column.len() {
                return Err(TableError::LengthMismatch {
                    name,
                    got: column.len(),
                    expected: first.len(),
                });
            }
        }
        self.names.push(name);
        self.columns.push(column);
        Ok(())
    }

    /// Builder-style [`Table::push`]; panics on length mismatch, for use by
    /// encoders that construct every column from the same row vector.
    pub fn with(mut self, name: &str, column: Column) -> Self {
        self.push(name, column).expect("column length mismatch");
        self
    }

    pub fn column(&self, name: &str) -> Result<&Column, TableError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.columns[i])
            .ok_or_else(|| TableError::MissingColumn(name.to_string()))
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn i64s(&self, name: &str) -> Result<&[Option<i64>], TableError> {
        match self.column(name)? {
            Column::I64(v) => Ok(v),
            _ => Err(TableError::WrongType {
                name: name.into(),
                expected: "i64",
            }),
        }
    }

    pub fn f64s(&self, name: &str) -> Result<&[Option<f64>], TableError> {
        match self.column(name)? {
            Column::F64(v) => Ok(v),
            _ => Err(TableError::WrongType {
                name: name.into(),
                expected: "f64",
            }),
        }
    }

    pub fn strs(&self, name: &str) -> Result<&[Option<String>], TableError> {
        match self.column(name)? {
            Column::Str(v) => Ok(v),
            _ => Err(TableError::WrongType {
                name: name.into(),
                expected: "string",
            }),
        }
    }

    pub fn bools(&self, name: &str) -> Result<&[Option<bool>], TableError> {
        match self.column(name)? {
            Column::Bool(v) => Ok(v),
            _ => Err(TableError::WrongType {
                name: name.into(),
                expected: "bool",
            }),
        }
    }

    /// Serializes to an in-memory Parquet file.
    pub fn to_parquet_bytes(&self) -> Result<Vec<u8>, TableError> {
        let decls: String = self
            .names
            .iter()
            .zip(&self.columns)
            .map(|(n, c)| c.parquet_decl(n))
            .collect::<Vec<_>>()
            .join(" ");
        let schema = Arc::new(parse_message_type(&format!("message table {{ {decls} }}"))?);
        let kv: Vec<KeyValue> = self
            .metadata
            .iter()
            .map(|(k, v)| KeyValue::new(k.clone(), v.clone()))
            .collect();
        let props = WriterProperties::builder()
            .set_created_by(CREATED_BY.to_string())
            .set_compression(Compression::UNCOMPRESSED)
            .set_dictionary_enabled(false)
            .set_encoding(Encoding::PLAIN)
            .set_statistics_enabled(EnabledStatistics::Chunk)
            .set_key_value_metadata((!kv.is_empty()).then_some(kv))
            .build();
        let mut buf = Vec::new();
        {
            let mut writer = SerializedFileWriter::new(&mut buf, schema, Arc::new(props))?;
            let mut rg = writer.next_row_group()?;
            let mut idx = 0;
            while let Some(mut col) = rg.next_column()? {
                match &self.columns[idx] {
                    Column::I64(v) => {
                        let vals: Vec<i64> = v.iter().flatten().copied().collect();
                        col.typed::<Int64Type>()
                            .write_batch(&vals, Some(&def_levels(v)), None)?;
                    }
                    Column::F64(v) => {
                        let vals: Vec<f64> = v.iter().flatten().copied().collect();
                        col.typed::<DoubleType>()
                            .write_batch(&vals, Some(&def_levels(v)), None)?;
                    }
                    Column::Str(v) => {
                        let vals: Vec<ByteArray> =
                            v.iter().flatten().map(|s| ByteArray::from(s.as_str())).collect();
                        col.typed::<ByteArrayType>()
                            .write_batch(&vals, Some(&def_levels(v)), None)?;
                    }
                    Column::Bool(v) => {
                        let vals: Vec<bool> = v.iter().flatten().copied().collect();
                        col.typed::<BoolType>()
                            .write_batch(&vals, Some(&def_levels(v)), None)?;
                    }
                }
                col.close()?;
                idx += 1;
            }
            rg.close()?;
            writer.close()?;
        }
        Ok(buf)
    }

    /// Writes atomically: a partially written file is never visible under `path`.
    pub fn write_parquet(&self, path: &Path) -> Result<(), TableError> {
        let bytes = self.to_parquet_bytes()?;
        write_atomic(path, &bytes)
    }

    pub fn read_parquet(path: &Path) -> Result<Table, TableError> {
        let file = File::open(path).map_err(io_err(path))?;
        let reader = SerializedFileReader::new(file)?;
        let meta = reader.metadata();
        let schema = meta.file_metadata().schema_descr_ptr();
        let mut table = Table::new();
        if let Some(kv) = meta.file_metadata().key_value_metadata() {
            for entry in kv {
                table
                    .metadata
                    .insert(entry.key.clone(), entry.value.clone().unwrap_or_default());
            }
        }
        let ncols = schema.num_columns();
        let mut columns: Vec<Option<Column>> = vec![None; ncols];
        for rg_idx in 0..reader.num_row_groups() {
            let rg = reader.get_row_group(rg_idx)?;
            for (j, slot) in columns.iter_mut().enumerate() {
                let descr = schema.column(j);
                let nullable = descr.max_def_level() > 0;
                let chunk = read_column(rg.get_column_reader(j)?, nullable, descr.name())?;
                match slot {
                    None => *slot = Some(chunk),
                    Some(existing) => append(existing, chunk),
                }
            }
        }
        for (j, col) in columns.into_iter().enumerate() {
            let name = schema.column(j).name().to_string();
            table.push(name, col.unwrap_or_else(|| Column::I64(Vec::new())))?;
        }
        Ok(table)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TableError> {
        let mut out = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(&self.names)?;
            for row in 0..self.num_rows() {
                w.write_record(self.columns.iter().map(|c| c.render(row)))?;
            }
            w.flush().map_err(io_err(path))?;
        }
        write_atomic(path, &out)
    }
}

fn append(into: &mut Column, from: Column) {
    match (into, from) {
        (Column::I64(a), Column::I64(b)) => a.extend(b),
        (Column::F64(a), Column::F64(b)) => a.extend(b),
        (Column::Str(a), Column::Str(b)) => a.extend(b),
        (Column::Bool(a), Column::Bool(b)) => a.extend(b),
        _ => unreachable!("row groups share one schema"),
    }
}

fn zip_defs<T>(values: Vec<T>, defs: &[i16], nullable: bool, n: usize) -> Vec<Option<T>> {
    if !nullable {
        return values.into_iter().map(Some).collect();
    }
    let mut it = values.into_iter();
    defs[..n]
        .iter()
        .map(|&d| if d > 0 { it.next() } else { None })
        .collect()
}

macro_rules! drain_reader {
    ($reader:expr, $nullable:expr, $map:expr) => {{
        let mut out = Vec::new();
        loop {
            let mut defs: Vec<i16> = Vec::new();
            let mut vals = Vec::new();
            let (records, _, _) = if $nullable {
                $reader.read_records(READ_BATCH, Some(&mut defs), None, &mut vals)?
            } else {
                $reader.read_records(READ_BATCH, None, None, &mut vals)?
            };
            if records == 0 {
                break;
            }
            let mapped: Vec<_> = vals.into_iter().map($map).collect();
            out.extend(zip_defs(mapped, &defs, $nullable, records));
        }
        out
    }};
}

fn read_column(reader: ColumnReader, nullable: bool, name: &str) -> Result<Column, TableError> {
    Ok(match reader {
        ColumnReader::Int64ColumnReader(mut r) => Column::I64(drain_reader!(r, nullable, |v| v)),
        ColumnReader::Int32ColumnReader(mut r) => {
            Column::I64(drain_reader!(r, nullable, i64::from))
        }
        ColumnReader::DoubleColumnReader(mut r) => Column::F64(drain_reader!(r, nullable, |v| v)),
        ColumnReader::FloatColumnReader(mut r) => {
            Column::F64(drain_reader!(r, nullable, f64::from))
        }
        ColumnReader::BoolColumnReader(mut r) => Column::Bool(drain_reader!(r, nullable, |v| v)),
        ColumnReader::ByteArrayColumnReader(mut r) => {
            Column::Str(drain_reader!(r, nullable, |v: ByteArray| {
                String::from_utf8_lossy(v.data()).into_owned()
            }))
        }
        _ => return Err(TableError::Unsupported(name.to_string())),
    })
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), TableError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
    }
    let tmp = path.with_extension(format!(
        "{}.partial",
        path.extension().and_then(|e| e.to_str()).unwrap_or("tmp")
    ));
    {
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Table {
        let mut t = Table::new()
            .with("id", Column::I64(vec![Some(1), None, Some(-3)]))
            .with("x", Column::F64(vec![Some(0.5), Some(1e-9), None]))
            .with(
                "name",
                Column::Str(vec![Some("a,b".into()), None, Some("c\"d".into())]),
            )
            .with("flag", Column::Bool(vec![Some(true), Some(false), None]));
        t.set_metadata("rule", "strict");
        t
    }

    #[test]
    fn parquet_round_trip_preserves_nulls_and_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.parquet");
        let t = sample();
        t.write_parquet(&path).unwrap();
        let back = Table::read_parquet(&path).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn parquet_bytes_are_deterministic() {
        let t = sample();
        assert_eq!(t.to_parquet_bytes().unwrap(), t.to_parquet_bytes().unwrap());
    }

    #[test]
    fn empty_table_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.parquet");
        let t = Table::new().with("a", Column::I64(vec![]));
        t.write_parquet(&path).unwrap();
        assert_eq!(Table::read_parquet(&path).unwrap().num_rows(), 0);
    }

    #[test]
    fn push_rejects_ragged_columns() {
        let mut t = Table::new().with("a", Column::I64(vec![Some(1)]));
        assert!(matches!(
            t.push("b", Column::I64(vec![])),
            Err(TableError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn csv_quotes_special_characters() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        sample().write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("id,x,name,flag\n"));
        assert!(text.contains("\"a,b\""));
        assert!(text.contains("\"c\"\"d\""));
    }
}
