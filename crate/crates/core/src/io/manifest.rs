// SPDX-License-Identifier: MIT OR Apache-2.0

//! JSON-lines manifest stored next to every embedding shard.
//!
//! The first line is a header `{"dataset":…,"source":…,"count":N}`; each
//! following line is one [`ManifestRecord`] in row order.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTag {
    Pubchem,
    Moses,
    Chembl,
    Mitotox,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub row: usize,
    pub id: String,
    pub smiles: String,
    /// Set when the row could not be embedded; such rows hold an all-zero
    /// vector and are excluded from analyses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dataset: String,
    pub source: SourceTag,
    pub records: Vec<ManifestRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dataset: String,
    source: SourceTag,
    count: usize,
}

impl Manifest {
    /// Manifest with sequential synthetic ids `"{prefix}{row}"` and empty SMILES.
    pub fn synthetic(dataset: &str, prefix: &str, count: usize) -> Self {
        Self {
            dataset: dataset.to_string(),
            source: SourceTag::Synthetic,
            records: (0..count)
                .map(|row| ManifestRecord {
                    row,
                    id: format!("{prefix}{row}"),
                    smiles: String::new(),
                    error: None,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Checks sequential row indices and id uniqueness.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let mut seen = HashSet::with_capacity(self.records.len());
        for (i, r) in self.records.iter().enumerate() {
            if r.row != i {
                return Err(format!("record {i} has row index {}", r.row));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(format!("duplicate molecule id {:?} at row {i}", r.id));
            }
        }
        Ok(())
    }

    /// Rows that were embedded successfully.
    pub fn valid_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.records
            .iter()
            .filter(|r| r.error.is_none())
            .map(|r| r.row)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = Header {
            dataset: self.dataset.clone(),
            source: self.source,
            count: self.records.len(),
        };
        writeln!(out, "{}", serde_json::to_string(&header).unwrap()).unwrap();
        for r in &self.records {
            writeln!(out, "{}", serde_json::to_string(r).unwrap()).unwrap();
        }
        out
    }

    pub fn from_jsonl(path: &Path, text: &str) -> Result<Self> {
        let mut offset = 0u64;
        let mut lines = text.split_inclusive('\n');
        let first = lines
            .next()
            .ok_or_else(|| Error::format(path, 0, "empty manifest"))?;
        let header: Header = serde_json::from_str(first.trim_end())
            .map_err(|e| Error::format(path, 0, format!("bad manifest header: {e}")))?;
        offset += first.len() as u64;
        let mut records = Vec::with_capacity(header.count);
        for line in lines {
            let trimmed = line.trim_end();
            if !trimmed.is_empty() {
                let rec: ManifestRecord = serde_json::from_str(trimmed).map_err(|e| {
                    Error::format(path, offset, format!("bad manifest record: {e}"))
                })?;
                records.push(rec);
            }
            offset += line.len() as u64;
        }
        if records.len() != header.count {
            return Err(Error::format(
                path,
                offset,
                format!(
                    "manifest header declares {} rows but {} records follow",
                    header.count,
                    records.len()
                ),
            ));
        }
        let m = Manifest {
            dataset: header.dataset,
            source: header.source,
            records,
        };
        m.validate().map_err(|msg| Error::format(path, 0, msg))?;
        Ok(m)
    }
}
