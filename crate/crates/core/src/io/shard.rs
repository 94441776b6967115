// SPDX-License-Identifier: MIT OR Apache-2.0

//! Embedding shard files.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SAEV"
//! 4       4     version (u32 = 1)
//! 8       4     d_model (u32)
//! 12      8     count (u64)
//! 20      4·count·d_model   row-major f32 payload
//! ```
//!
//! The manifest lives next to the shard with the extension replaced by
//! `manifest.jsonl`.

use std::path::{Path, PathBuf};

use super::bytes::{put_f32s, ByteReader};
use super::manifest::Manifest;
use crate::error::{Error, Result};

pub const SHARD_MAGIC: &[u8; 4] = b"SAEV";
pub const SHARD_VERSION: u32 = 1;
pub const SHARD_HEADER_LEN: usize = 20;

/// A dense `count × d_model` block of finite f32 embedding vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingShard {
    d_model: usize,
    count: usize,
    data: Vec<f32>,
}

impl EmbeddingShard {
    /// Builds a shard from row-major data, rejecting NaN/Inf with the row index.
    pub fn new(d_model: usize, data: Vec<f32>) -> Result<Self> {
        if d_model == 0 {
            return Err(Error::Shape("d_model must be positive".into()));
        }
        if !data.len().is_multiple_of(d_model) {
            return Err(Error::Shape(format!(
                "{} values is not a multiple of d_model={d_model}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "embedding shard".into(),
                row: i / d_model,
                col: i % d_model,
            });
        }
        Ok(Self {
            d_model,
            count: data.len() / d_model,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(d, rows.concat())
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d_model..(i + 1) * self.d_model]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.d_model)
    }

    /// Concatenates shards of equal width.
    pub fn concat(shards: &[EmbeddingShard]) -> Result<Self> {
        let first = shards
            .first()
            .ok_or_else(|| Error::EmptyData("no shards given".into()))?;
        let mut data = Vec::new();
        for s in shards {
            if s.d_model != first.d_model {
                return Err(Error::Shape(format!(
                    "shard widths differ: {} vs {}",
                    s.d_model, first.d_model
                )));
            }
            data.extend_from_slice(&s.data);
        }
        Ok(Self {
            d_model: first.d_model,
            count: data.len() / first.d_model,
            data,
        })
    }

    /// Subset of rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.d_model);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self {
            d_model: self.d_model,
            count: rows.len(),
            data,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(SHARD_HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(SHARD_MAGIC);
        out.extend_from_slice(&SHARD_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.d_model as u32).to_le_bytes());
        out.extend_from_slice(&(self.count as u64).to_le_bytes());
        put_f32s(&mut out, &self.data);
        out
    }

    /// Parses the binary shard format; `path` is only used in error messages.
    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(path, bytes);
        r.expect_magic(SHARD_MAGIC)?;
        let version = r.u32("version")?;
        if version != SHARD_VERSION {
            return Err(r.error_at(4, format!("unsupported shard version {version}")));
        }
        let d_model = r.u32("d_model")? as usize;
        if d_model == 0 {
            return Err(r.error_at(8, "d_model is zero"));
        }
        let count = r.u64("count")?;
        let count = usize::try_from(count).map_err(|_| r.error_at(12, "count overflows"))?;
        let n = count
            .checked_mul(d_model)
            .ok_or_else(|| r.error_at(12, "payload size overflows"))?;
        if r.remaining() < n * 4 {
            return Err(r.error(format!(
                "truncated payload: header declares {count} rows ({} bytes), {} bytes present",
                n * 4,
                r.remaining()
            )));
        }
        let data = r.f32s(n, d_model, "payload")?;
        r.finish()?;
        Ok(Self {
            d_model,
            count,
            data,
        })
    }
}

/// Path of the manifest that accompanies the shard at `shard`.
pub fn manifest_path(shard: &Path) -> PathBuf {
    shard.with_extension("manifest.jsonl")
}

pub fn write_shard(shard: &EmbeddingShard, manifest: &Manifest, path: &Path) -> Result<()> {
    if manifest.len() != shard.count() {
        return Err(Error::Shape(format!(
            "manifest has {} rows, shard has {}",
            manifest.len(),
            shard.count()
        )));
    }
    manifest.validate().map_err(Error::Config)?;
    super::write_file(path, &shard.to_bytes())?;
    super::write_file(&manifest_path(path), manifest.to_jsonl().as_bytes())
}

/// Reads only the binary part of a shard.
pub fn read_shard_data(path: &Path) -> Result<EmbeddingShard> {
    let bytes = super::read_file(path)?;
    EmbeddingShard::from_bytes(path, &bytes)
}

/// Reads a shard and its manifest, enforcing row-count agreement.
pub fn read_shard(path: &Path) -> Result<(EmbeddingShard, Manifest)> {
    let shard = read_shard_data(path)?;
    let mpath = manifest_path(path);
    let text = String::from_utf8(super::read_file(&mpath)?)
        .map_err(|e| Error::format(&mpath, e.utf8_error().valid_up_to() as u64, "not UTF-8"))?;
    let manifest = Manifest::from_jsonl(&mpath, &text)?;
    if manifest.len() != shard.count() {
        return Err(Error::format(
            &mpath,
            0,
            format!(
                "manifest has {} rows but shard {} has {}",
                manifest.len(),
                path.display(),
                shard.count()
            ),
        ));
    }
    Ok((shard, manifest))
}
