// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Bounds-checked little-endian reader that reports failures with the file
/// path and byte offset.
pub(crate) struct ByteReader<'a> {
    path: PathBuf,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(path: &Path, buf: &'a [u8]) -> Self {
        Self {
            path: path.to_path_buf(),
            buf,
            pos: 0,
        }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn error(&self, message: impl Into<String>) -> Error {
        Error::format(&self.path, self.offset(), message)
    }

    pub fn error_at(&self, offset: u64, message: impl Into<String>) -> Error {
        Error::format(&self.path, offset, message)
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.error(format!(
                "truncated {what}: need {n} bytes, {} available",
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != magic {
            return Err(self.error_at(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        Ok(())
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    /// Reads `n` f32 values, rejecting NaN/Inf. `row_width` is used to
    /// locate the offending element as (row, column).
    pub fn f32s(&mut self, n: usize, row_width: usize, what: &str) -> Result<Vec<f32>> {
        let byte_len = n
            .checked_mul(4)
            .ok_or_else(|| self.error(format!("{what} length overflows")))?;
        let start = self.offset();
        let raw = self.take(byte_len, what)?;
        let mut out = Vec::with_capacity(n);
        for (i, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                let w = row_width.max(1);
                return Err(self.error_at(
                    start + 4 * i as u64,
                    format!("non-finite value in {what} at row {}, column {}", i / w, i % w),
                ));
            }
            out.push(v);
        }
        Ok(out)
    }

    pub fn f64s(&mut self, n: usize, row_width: usize, what: &str) -> Result<Vec<f64>> {
        let byte_len = n
            .checked_mul(8)
            .ok_or_else(|| self.error(format!("{what} length overflows")))?;
        let start = self.offset();
        let raw = self.take(byte_len, what)?;
        let mut out = Vec::with_capacity(n);
        for (i, chunk) in raw.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                let w = row_width.max(1);
                return Err(self.error_at(
                    start + 8 * i as u64,
                    format!("non-finite value in {what} at row {}, column {}", i / w, i % w),
                ));
            }
            out.push(v);
        }
        Ok(out)
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(self.error(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}
