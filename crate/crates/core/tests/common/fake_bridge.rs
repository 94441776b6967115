// SPDX-License-Identifier: MIT OR Apache-2.0

//! In-process bridge double: decodes by nearest vocabulary vector and
//! canonicalizes by stripping whitespace.

use std::path::{Path, PathBuf};

use molsae::bridge::{Request, Response, Transport};
use molsae::io::read_shard_data;
use molsae::Result;
use serde_json::{json, Value};

const ERRORS: [&str; 4] = [
    "Explicit valence for atom # 2 N, 4, is greater than permitted",
    "Can't kekulize mol.  Unkekulized atoms: 1 2 3",
    "SMILES Parse Error: unclosed ring for input",
    "SMILES Parse Error: syntax error while parsing",
];

/// Same embedding as the Python test bridge.
pub fn embed_one(smiles: &str, dim: usize) -> Vec<f32> {
    let mut v = vec![0.0f64; dim];
    for (p, ch) in smiles.chars().enumerate() {
        for (j, x) in v.iter_mut().enumerate() {
            *x += ((ch as u32 + 1) as f64 * (j + 1) as f64 * 0.37 + p as f64 * 0.11).sin();
        }
    }
    let scale = 1.0 / (smiles.chars().count().max(1) as f64).sqrt();
    v.into_iter().map(|x| (x * scale) as f32).collect()
}

/// Molecule-like strings built from fragments, all distinct.
pub fn vocabulary(n: usize) -> Vec<String> {
    let heads = ["C", "CC", "CCC", "c1ccccc1", "C1CC1", "N", "OC", "C(C)C"];
    let mids = ["O", "N", "Cl", "C(=O)O", "S", "C#N", "F", "[C@H](C)O"];
    let tails = ["", "C", "N", "O", "CC", "Br", "c1ccncc1", "C(F)(F)F"];
    let mut out = vec![];
    for t in tails {
        for m in mids {
            for h in heads {
                out.push(format!("{h}{m}{t}"));
            }
        }
    }
    out.truncate(n);
    out
}

pub struct FakeBridge {
    vocab: Vec<(String, Vec<f32>)>,
    radius: f32,
    /// Requests answered with an error once this many decode calls have succeeded.
    pub fail_after_decodes: Option<usize>,
    pub decodes: usize,
    pub seen_paths: Vec<PathBuf>,
}

impl FakeBridge {
    pub fn new(vocab: &[String], dim: usize, radius: f32) -> Self {
        Self {
            vocab: vocab.iter().map(|s| (s.clone(), embed_one(s, dim))).collect(),
            radius,
            fail_after_decodes: None,
            decodes: 0,
            seen_paths: vec![],
        }
    }

    fn decode(&mut self, path: &Path) -> Result<Value> {
        self.seen_paths.push(path.to_path_buf());
        let shard = read_shard_data(path)?;
        let rows: Vec<Value> = shard
            .rows()
            .map(|row| {
                let (best, dist) = self
                    .vocab
                    .iter()
                    .map(|(s, v)| (s, row.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f32>().sqrt()))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("vocabulary is not empty");
                if dist > self.radius {
                    let h = row.iter().map(|x| x.to_bits() as usize).fold(0usize, |a, b| a.wrapping_mul(31).wrapping_add(b));
                    json!({ "error": ERRORS[h % ERRORS.len()] })
                } else {
                    json!({ "smiles": best })
                }
            })
            .collect();
        Ok(json!({ "rows": rows }))
    }
}

impl Transport for FakeBridge {
    fn exchange(&mut self, request: &Request) -> Result<Response> {
        let p = &request.params;
        Ok(match request.method.as_str() {
            "decode" => {
                if self.fail_after_decodes.is_some_and(|n| self.decodes >= n) {
                    return Ok(Response::failure(request.id, "model", "out of memory"));
                }
                self.decodes += 1;
                let path = PathBuf::from(p["shard_path"].as_str().unwrap_or_default());
                Response::success(request.id, self.decode(&path)?)
            }
            "canonicalize" => {
                let rows: Vec<Value> = p["smiles"]
                    .as_array()
                    .map(|a| a.as_slice())
                    .unwrap_or_default()
                    .iter()
                    .map(|s| {
                        let s = s.as_str().unwrap_or_default().trim();
                        let plain: String = s.chars().filter(|c| !"@/\\".contains(*c)).collect();
                        json!({ "canonical": s, "canonical_nostereo": plain })
                    })
                    .collect();
                Response::success(request.id, json!({ "rows": rows }))
            }
            other => Response::failure(request.id, "unknown_method", other),
        })
    }
}
