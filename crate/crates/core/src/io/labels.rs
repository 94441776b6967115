// SPDX-License-Identifier: MIT OR Apache-2.0

//! Label matrices: per-molecule targets for probes.
//!
//! ```text
//! "SAEL" | version u32 = 1 | header_len u32 | header JSON
//! values: count × targets f64, row-major
//! mask:   count × targets bytes (1 = present, 0 = missing)
//! ```
//!
//! Missing cells carry value 0.0 on disk and are only allowed in continuous columns.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bytes::{put_f64s, ByteReader};
use crate::error::{Error, Result};

pub const LABELS_MAGIC: &[u8; 4] = b"SAEL";
pub const LABELS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Binary,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Smarts,
    Descriptor,
    Toxicity,
    Bioactivity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    count: usize,
    targets: Vec<String>,
    kinds: Vec<ColumnKind>,
    provenance: Provenance,
    values: Vec<f64>,
    present: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    count: usize,
    targets: Vec<String>,
    kinds: Vec<ColumnKind>,
    provenance: Provenance,
}

impl LabelMatrix {
    /// `values` is row-major `count × targets`; `None` marks a missing cell.
    pub fn new(
        targets: Vec<String>,
        kinds: Vec<ColumnKind>,
        provenance: Provenance,
        count: usize,
        cells: Vec<Option<f64>>,
    ) -> Result<Self> {
        if targets.len() != kinds.len() {
            return Err(Error::Shape("targets and kinds differ in length".into()));
        }
        if cells.len() != count * targets.len() {
            return Err(Error::Shape(format!(
                "{} cells for {count} rows × {} targets",
                cells.len(),
                targets.len()
            )));
        }
        let present: Vec<bool> = cells.iter().map(Option::is_some).collect();
        let values: Vec<f64> = cells.iter().map(|c| c.unwrap_or(0.0)).collect();
        let m = Self {
            count,
            targets,
            kinds,
            provenance,
            values,
            present,
        };
        m.validate()?;
        Ok(m)
    }

    /// Binary matrix with no missing cells, e.g. substructure indicators.
    pub fn binary(targets: Vec<String>, provenance: Provenance, count: usize, values: Vec<bool>) -> Result<Self> {
        let kinds = vec![ColumnKind::Binary; targets.len()];
        let cells = values.into_iter().map(|b| Some(if b { 1.0 } else { 0.0 })).collect();
        Self::new(targets, kinds, provenance, count, cells)
    }

    fn validate(&self) -> Result<()> {
        let t = self.targets.len();
        for (i, (&v, &p)) in self.values.iter().zip(&self.present).enumerate() {
            let (row, col) = (i / t, i % t);
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("label column {}", self.targets[col]),
                    row,
                    col,
                });
            }
            if self.kinds[col] == ColumnKind::Binary {
                if !p {
                    return Err(Error::Config(format!(
                        "binary column {} has a missing cell at row {row}",
                        self.targets[col]
                    )));
                }
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Config(format!(
                        "binary column {} has value {v} at row {row}",
                        self.targets[col]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn targets(&self) -> &[String] {
        &self.targets
    }

    pub fn kinds(&self) -> &[ColumnKind] {
        &self.kinds
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn n_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let i = row * self.targets.len() + col;
        self.present[i].then_some(self.values[i])
    }

    /// Column `col` as cells (`None` = missing).
    pub fn column(&self, col: usize) -> Vec<Option<f64>> {
        (0..self.count).map(|r| self.get(r, col)).collect()
    }

    /// Binary column as booleans. Fails on continuous columns.
    pub fn binary_column(&self, col: usize) -> Result<Vec<bool>> {
        if self.kinds[col] != ColumnKind::Binary {
            return Err(Error::Config(format!("column {} is not binary", self.targets[col])));
        }
        Ok((0..self.count).map(|r| self.values[r * self.targets.len() + col] == 1.0).collect())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.targets.iter().position(|t| t == name)
    }

    /// Keeps only the given rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let t = self.targets.len();
        let mut values = Vec::with_capacity(rows.len() * t);
        let mut present = Vec::with_capacity(rows.len() * t);
        for &r in rows {
            values.extend_from_slice(&self.values[r * t..(r + 1) * t]);
            present.extend_from_slice(&self.present[r * t..(r + 1) * t]);
        }
        Self {
            count: rows.len(),
            targets: self.targets.clone(),
            kinds: self.kinds.clone(),
            provenance: self.provenance,
            values,
            present,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            count: self.count,
            targets: self.targets.clone(),
            kinds: self.kinds.clone(),
            provenance: self.provenance,
        })
        .expect("label header serializes");
        let mut out = Vec::with_capacity(12 + header.len() + self.values.len() * 9);
        out.extend_from_slice(LABELS_MAGIC);
        out.extend_from_slice(&LABELS_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        put_f64s(&mut out, &self.values);
        out.extend(self.present.iter().map(|&p| p as u8));
        out
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(path, bytes);
        r.expect_magic(LABELS_MAGIC)?;
        let version = r.u32("version")?;
        if version != LABELS_VERSION {
            return Err(r.error_at(4, format!("unsupported label version {version}")));
        }
        let header_len = r.u32("header length")? as usize;
        let header_off = r.offset();
        let header: Header = serde_json::from_slice(r.take(header_len, "header")?)
            .map_err(|e| r.error_at(header_off, format!("bad header JSON: {e}")))?;
        if header.targets.len() != header.kinds.len() {
            return Err(r.error_at(header_off, "targets and kinds differ in length"));
        }
        let cells = header
            .count
            .checked_mul(header.targets.len())
            .ok_or_else(|| r.error_at(header_off, "size overflows"))?;
        let values = r.f64s(cells, header.targets.len(), "values")?;
        let mask_off = r.offset();
        let mask = r.take(cells, "mask")?;
        let mut present = Vec::with_capacity(cells);
        for (i, &b) in mask.iter().enumerate() {
            match b {
                0 => present.push(false),
                1 => present.push(true),
                other => {
                    return Err(r.error_at(mask_off + i as u64, format!("mask byte {other} is not 0/1")))
                }
            }
        }
        r.finish()?;
        let m = Self {
            count: header.count,
            targets: header.targets,
            kinds: header.kinds,
            provenance: header.provenance,
            values,
            present,
        };
        m.validate()
            .map_err(|e| Error::format(path, header_off, e.to_string()))?;
        Ok(m)
    }
}

pub fn write_labels(labels: &LabelMatrix, path: &Path) -> Result<()> {
    super::write_file(path, &labels.to_bytes())
}

pub fn read_labels(path: &Path) -> Result<LabelMatrix> {
    let bytes = super::read_file(path)?;
    LabelMatrix::from_bytes(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> LabelMatrix {
        LabelMatrix::new(
            vec!["hydroxyl".into(), "MW".into()],
            vec![ColumnKind::Binary, ColumnKind::Continuous],
            Provenance::Descriptor,
            3,
            vec![Some(1.0), Some(46.07), Some(0.0), None, Some(1.0), Some(16.04)],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_keeps_mask() {
        let m = fixture();
        let bytes = m.to_bytes();
        let back = LabelMatrix::from_bytes(Path::new("l"), &bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.get(1, 1), None);
        assert_eq!(back.get(2, 1), Some(16.04));
        assert_eq!(back.binary_column(0).unwrap(), vec![true, false, true]);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn binary_columns_only_hold_zero_one() {
        let err = LabelMatrix::new(
            vec!["x".into()],
            vec![ColumnKind::Binary],
            Provenance::Smarts,
            2,
            vec![Some(1.0), Some(0.5)],
        );
        assert!(err.is_err());
        let err = LabelMatrix::new(vec!["x".into()], vec![ColumnKind::Binary], Provenance::Smarts, 1, vec![None]);
        assert!(err.is_err());
    }

    #[test]
    fn bad_mask_byte_located() {
        let mut bytes = fixture().to_bytes();
        let n = bytes.len();
        bytes[n - 2] = 7;
        match LabelMatrix::from_bytes(Path::new("l"), &bytes).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset as usize, n - 2),
            e => panic!("{e}"),
        }
    }
}
