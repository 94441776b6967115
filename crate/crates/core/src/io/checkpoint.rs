// SPDX-License-Identifier: MIT OR Apache-2.0

//! SAE checkpoint files.
//!
//! ```text
//! "SAEC" | version u32 = 1 | header_len u32 | header JSON (config, norm_scaler, step)
//! section_count u32
//! per section: name_len u16 | name | rows u32 | cols u32 | byte_len u64 | f32 payload
//! ```
//!
//! Sections appear in the order `W_enc` (n × d), `b_enc` (1 × n),
//! `W_dec` (d × n), `b_pre` (1 × d).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bytes::{put_f32s, ByteReader};
use crate::error::{Error, Result};
use crate::sae::{Sae, SparseCode};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SAEC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaeConfig {
    pub d_model: usize,
    pub dict_size: usize,
    pub k: usize,
    pub auxk_alpha: f64,
    pub seed: u64,
}

impl SaeConfig {
    pub fn expansion_factor(&self) -> usize {
        self.dict_size / self.d_model.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.dict_size == 0 {
            return Err(Error::Config("d_model and dict_size must be positive".into()));
        }
        if !self.dict_size.is_multiple_of(self.d_model) {
            return Err(Error::Config(format!(
                "dict_size {} is not a multiple of d_model {}",
                self.dict_size, self.d_model
            )));
        }
        if self.k == 0 || self.k > self.dict_size {
            return Err(Error::Config(format!(
                "k={} must be in 1..={}",
                self.k, self.dict_size
            )));
        }
        if !(self.auxk_alpha >= 0.0 && self.auxk_alpha.is_finite()) {
            return Err(Error::Config("auxk_alpha must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// A trained autoencoder together with the input normalization it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeCheckpoint {
    pub config: SaeConfig,
    pub sae: Sae<f32>,
    /// Inputs are divided by this before encoding.
    pub norm_scaler: f32,
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: SaeConfig,
    norm_scaler: f32,
    step: u64,
}

impl SaeCheckpoint {
    pub fn new(config: SaeConfig, sae: Sae<f32>, norm_scaler: f32, step: u64) -> Result<Self> {
        let ck = Self {
            config,
            sae,
            norm_scaler,
            step,
        };
        ck.validate()?;
        Ok(ck)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.sae.d_model() != self.config.d_model || self.sae.dict_size() != self.config.dict_size {
            return Err(Error::Shape("parameters do not match config dimensions".into()));
        }
        if !(self.norm_scaler > 0.0 && self.norm_scaler.is_finite()) {
            return Err(Error::Config(format!(
                "norm_scaler must be positive and finite, got {}",
                self.norm_scaler
            )));
        }
        for (name, t) in self.sae.tensors() {
            if let Some(i) = t.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: name.into(),
                    row: i / self.config.d_model,
                    col: i % self.config.d_model,
                });
            }
        }
        Ok(())
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    fn normalize(&self, x: &[f32]) -> Vec<f32> {
        x.iter().map(|v| v / self.norm_scaler).collect()
    }

    /// Encodes a raw (unnormalized) embedding with the checkpoint's `k`.
    pub fn encode_raw(&self, x: &[f32]) -> Result<SparseCode<f32>> {
        self.sae.encode(&self.normalize(x), self.config.k)
    }

    /// Encodes a raw row-major batch.
    pub fn encode_raw_batch(&self, batch: &[f32]) -> Result<Vec<SparseCode<f32>>> {
        self.sae.encode_batch(&self.normalize(batch), self.config.k)
    }

    /// Decodes and maps back to the raw embedding scale.
    pub fn decode_raw(&self, code: &SparseCode<f32>) -> Result<Vec<f32>> {
        let mut x = self.sae.decode(code)?;
        for v in &mut x {
            *v *= self.norm_scaler;
        }
        Ok(x)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            norm_scaler: self.norm_scaler,
            step: self.step,
        })
        .expect("checkpoint header serializes");
        let (d, n) = (self.config.d_model, self.config.dict_size);
        let mut out = Vec::with_capacity(64 + header.len() + 4 * (2 * n * d + n + d));
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&4u32.to_le_bytes());

        let w_dec_t = transpose(&self.sae.w_dec, n, d);
        let sections: [(&str, usize, usize, &[f32]); 4] = [
            ("W_enc", n, d, &self.sae.w_enc),
            ("b_enc", 1, n, &self.sae.b_enc),
            ("W_dec", d, n, &w_dec_t),
            ("b_pre", 1, d, &self.sae.b_pre),
        ];
        for (name, rows, cols, data) in sections {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(rows as u32).to_le_bytes());
            out.extend_from_slice(&(cols as u32).to_le_bytes());
            out.extend_from_slice(&((data.len() * 4) as u64).to_le_bytes());
            put_f32s(&mut out, data);
        }
        out
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(path, bytes);
        r.expect_magic(CHECKPOINT_MAGIC)?;
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(r.error_at(4, format!("unsupported checkpoint version {version}")));
        }
        let header_len = r.u32("header length")? as usize;
        let header_off = r.offset();
        let header: Header = serde_json::from_slice(r.take(header_len, "header")?)
            .map_err(|e| r.error_at(header_off, format!("bad header JSON: {e}")))?;
        header
            .config
            .validate()
            .map_err(|e| r.error_at(header_off, e.to_string()))?;
        let (d, n) = (header.config.d_model, header.config.dict_size);
        let sections = r.u32("section count")?;
        if sections != 4 {
            return Err(r.error(format!("expected 4 tensor sections, found {sections}")));
        }
        let expected = [("W_enc", n, d), ("b_enc", 1, n), ("W_dec", d, n), ("b_pre", 1, d)];
        let mut tensors = Vec::with_capacity(4);
        for (want, rows, cols) in expected {
            let at = r.offset();
            let name_len = r.u16("section name length")? as usize;
            let name = r.take(name_len, "section name")?;
            if name != want.as_bytes() {
                return Err(r.error_at(
                    at,
                    format!("expected section {want}, found {:?}", String::from_utf8_lossy(name)),
                ));
            }
            let (got_rows, got_cols) = (r.u32("rows")? as usize, r.u32("cols")? as usize);
            let byte_len = r.u64("section length")?;
            if got_rows != rows || got_cols != cols || byte_len != (rows * cols * 4) as u64 {
                return Err(r.error_at(
                    at,
                    format!(
                        "section {want} is {got_rows}×{got_cols} ({byte_len} bytes), config requires {rows}×{cols} ({} bytes)",
                        rows * cols * 4
                    ),
                ));
            }
            tensors.push(r.f32s(rows * cols, cols, want)?);
        }
        r.finish()?;
        let b_pre = tensors.pop().unwrap();
        let w_dec = transpose(&tensors.pop().unwrap(), d, n);
        let b_enc = tensors.pop().unwrap();
        let w_enc = tensors.pop().unwrap();
        let sae = Sae::from_parts(d, n, w_enc, b_enc, w_dec, b_pre)?;
        let ck = SaeCheckpoint {
            config: header.config,
            sae,
            norm_scaler: header.norm_scaler,
            step: header.step,
        };
        ck.validate().map_err(|e| r.error_at(header_off, e.to_string()))?;
        Ok(ck)
    }
}

fn transpose(m: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0; m.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = m[r * cols + c];
        }
    }
    out
}

pub fn save_checkpoint(ckpt: &SaeCheckpoint, path: &Path) -> Result<()> {
    ckpt.validate()?;
    super::write_file(path, &ckpt.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<SaeCheckpoint> {
    let bytes = super::read_file(path)?;
    SaeCheckpoint::from_bytes(path, &bytes)
}
