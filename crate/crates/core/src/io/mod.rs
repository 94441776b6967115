// SPDX-License-Identifier: MIT OR Apache-2.0

//! On-disk formats: embedding shards with JSON-lines manifests, SAE
//! checkpoints and label matrices. All numeric payloads are little-endian.

pub(crate) mod bytes;
pub mod checkpoint;
pub mod labels;
pub mod manifest;
pub mod shard;

pub use checkpoint::{load_checkpoint, save_checkpoint, SaeCheckpoint, SaeConfig};
pub use labels::{read_labels, write_labels, ColumnKind, LabelMatrix, Provenance};
pub use manifest::{Manifest, ManifestRecord, SourceTag};
pub use shard::{manifest_path, read_shard, read_shard_data, write_shard, EmbeddingShard};

use std::path::Path;

use crate::error::{Error, Result};

/// Writes `bytes` to `path`, mapping failures to [`Error::Io`].
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
