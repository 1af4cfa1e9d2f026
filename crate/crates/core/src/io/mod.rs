//! Artifact serialization: columnar tables and run manifests.

pub mod manifest;
pub mod table;

pub use manifest::{sha256_file, sha256_hex, ArtifactRef, Manifest, ManifestError, ManifestLog};
pub use table::{write_atomic, Column, Table, TableError};
