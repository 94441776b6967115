// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reconstruction and functional fidelity metrics.
//!
//! The error taxonomy is an ordered keyword table loaded from JSON
//! (`data/error_taxonomy.json` is compiled in as the default); the first rule
//! whose pattern occurs in the lowercased message wins, and unmatched
//! messages fall into [`ErrorCategory::Other`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{EmbeddingShard, SaeCheckpoint};
use crate::sae::SparseCode;

/// Mean squared row error and fraction of variance explained.
///
/// `fve = 1 - Σ‖x_i - x̂_i‖² / Σ‖x_i - μ‖²` with `μ` the column means of `x`,
/// pooled over every element of the matrix.
pub fn reconstruction_metrics(x: &[f32], x_hat: &[f32], d_model: usize) -> Result<(f64, f64)> {
    if x.len() != x_hat.len() || d_model == 0 || !x.len().is_multiple_of(d_model) {
        return Err(Error::Shape("x and x̂ must have equal whole-row shapes".into()));
    }
    let count = x.len() / d_model;
    if count < 2 {
        return Err(Error::EmptyData("need at least two rows for variance".into()));
    }
    let mut mean = vec![0.0f64; d_model];
    for row in x.chunks_exact(d_model) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    let (mut resid, mut total) = (0.0f64, 0.0f64);
    for (row, rrow) in x.chunks_exact(d_model).zip(x_hat.chunks_exact(d_model)) {
        for ((&v, &r), &m) in row.iter().zip(rrow).zip(&mean) {
            let e = v as f64 - r as f64;
            resid += e * e;
            let c = v as f64 - m;
            total += c * c;
        }
    }
    if total == 0.0 {
        return Err(Error::UndefinedFve);
    }
    Ok((resid / count as f64, 1.0 - resid / total))
}

/// Fraction of the `n` features with a strictly positive activation somewhere in `codes`.
pub fn fraction_alive<'a>(codes: impl IntoIterator<Item = &'a SparseCode<f32>>, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut alive = vec![false; n];
    for code in codes {
        for (i, v) in code.iter() {
            if v > 0.0 {
                alive[i as usize] = true;
            }
        }
    }
    alive.iter().filter(|&&a| a).count() as f64 / n as f64
}

/// Mean of `recon_losses[i] - orig_losses[i]`.
pub fn delta_loss(orig_losses: &[f64], recon_losses: &[f64]) -> Result<f64> {
    if orig_losses.len() != recon_losses.len() {
        return Err(Error::Shape(format!(
            "{} original losses vs {} reconstructed",
            orig_losses.len(),
            recon_losses.len()
        )));
    }
    if orig_losses.is_empty() {
        return Err(Error::EmptyData("no losses".into()));
    }
    let sum: f64 = orig_losses.iter().zip(recon_losses).map(|(o, r)| r - o).sum();
    Ok(sum / orig_losses.len() as f64)
}

/// Stand-in for the foundation model's loss when no bridge is available: a
/// fixed random softmax readout. The "model loss" of a vector is its
/// cross-entropy against the readout distribution of the original vector, so
/// the per-row difference is `KL(p(x) ‖ p(x̂))`.
#[derive(Debug, Clone)]
pub struct ReadoutProxy {
    d_model: usize,
    classes: usize,
    weights: Vec<f64>,
    input_scale: f64,
}

impl ReadoutProxy {
    /// `input_scale` divides inputs before the readout (use the data's normalizer).
    pub fn new(d_model: usize, classes: usize, input_scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 4.0 / (d_model as f64).sqrt();
        let weights = (0..classes * d_model)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * std
            })
            .collect();
        Self {
            d_model,
            classes,
            weights,
            input_scale,
        }
    }

    fn log_probs(&self, x: &[f32]) -> Vec<f64> {
        let logits: Vec<f64> = self
            .weights
            .chunks_exact(self.d_model)
            .map(|w| w.iter().zip(x).map(|(a, &b)| a * b as f64 / self.input_scale).sum())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        logits.iter().map(|l| l - lse).collect()
    }

    /// Per-row `(L(x), L(x̂))`, both cross-entropies against `p(x)`.
    pub fn loss_pairs(&self, x: &[f32], x_hat: &[f32]) -> Result<Vec<(f64, f64)>> {
        if x.len() != x_hat.len() || !x.len().is_multiple_of(self.d_model) {
            return Err(Error::Shape("proxy inputs have mismatched shapes".into()));
        }
        Ok(x.chunks_exact(self.d_model)
            .zip(x_hat.chunks_exact(self.d_model))
            .map(|(a, b)| {
                let lp = self.log_probs(a);
                let lq = self.log_probs(b);
                let (mut orig, mut recon) = (0.0, 0.0);
                for c in 0..self.classes {
                    let p = lp[c].exp();
                    orig -= p * lp[c];
                    recon -= p * lq[c];
                }
                (orig, recon)
            })
            .collect())
    }
}

/// Reconstruction-side metrics of one checkpoint on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionEval {
    pub l2: f64,
    pub fve: f64,
    pub fraction_alive: f64,
    pub delta_loss: f64,
}

/// Encodes and decodes `eval` (raw scale) and scores it. ΔL uses `proxy`.
pub fn evaluate_checkpoint(ck: &SaeCheckpoint, eval: &EmbeddingShard, proxy: &ReadoutProxy) -> Result<ReconstructionEval> {
    let (codes, x_hat) = reconstruct(ck, eval)?;
    let (l2, fve) = reconstruction_metrics(eval.data(), &x_hat, eval.d_model())?;
    let pairs = proxy.loss_pairs(eval.data(), &x_hat)?;
    let (o, r): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    Ok(ReconstructionEval {
        l2,
        fve,
        fraction_alive: fraction_alive(&codes, ck.config.dict_size),
        delta_loss: delta_loss(&o, &r)?,
    })
}

/// Codes and raw-scale reconstructions for every row.
pub fn reconstruct(ck: &SaeCheckpoint, data: &EmbeddingShard) -> Result<(Vec<SparseCode<f32>>, Vec<f32>)> {
    if data.d_model() != ck.d_model() {
        return Err(Error::Shape(format!(
            "data d_model {} differs from checkpoint {}",
            data.d_model(),
            ck.d_model()
        )));
    }
    let codes = ck.encode_raw_batch(data.data())?;
    let mut x_hat = Vec::with_capacity(data.data().len());
    for c in &codes {
        x_hat.extend(ck.decode_raw(c)?);
    }
    Ok((codes, x_hat))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    Valence,
    Aromaticity,
    BondDuplication,
    UnclosedRing,
    Parentheses,
    Syntax,
    Other,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 7] = [
        ErrorCategory::Valence,
        ErrorCategory::Aromaticity,
        ErrorCategory::BondDuplication,
        ErrorCategory::UnclosedRing,
        ErrorCategory::Parentheses,
        ErrorCategory::Syntax,
        ErrorCategory::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Valence => "valence",
            ErrorCategory::Aromaticity => "aromaticity",
            ErrorCategory::BondDuplication => "bond_duplication",
            ErrorCategory::UnclosedRing => "unclosed_ring",
            ErrorCategory::Parentheses => "parentheses",
            ErrorCategory::Syntax => "syntax",
            ErrorCategory::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxonomyRule {
    pub category: ErrorCategory,
    pub patterns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorTaxonomy {
    pub rules: Vec<TaxonomyRule>,
}

const DEFAULT_TAXONOMY: &str = include_str!("../data/error_taxonomy.json");

impl Default for ErrorTaxonomy {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_TAXONOMY).expect("built-in taxonomy parses")
    }
}

impl ErrorTaxonomy {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn classify(&self, error_text: &str) -> ErrorCategory {
        let lower = error_text.to_lowercase();
        self.rules
            .iter()
            .find(|r| r.patterns.iter().any(|p| lower.contains(&p.to_lowercase())))
            .map(|r| r.category)
            .unwrap_or(ErrorCategory::Other)
    }
}

/// Classifies with the built-in table.
pub fn classify_decode_error(error_text: &str) -> ErrorCategory {
    ErrorTaxonomy::default().classify(error_text)
}

/// Canonical text of a molecule with and without stereo markers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalForm {
    pub canonical: String,
    pub canonical_nostereo: String,
}

/// Original molecule and what came back from decoding its reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeRecord {
    pub original: CanonicalForm,
    pub decoded: std::result::Result<CanonicalForm, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalFidelity {
    pub strict_accuracy: f64,
    pub stereo_accuracy: f64,
    pub error_histogram: BTreeMap<ErrorCategory, usize>,
    pub failed: usize,
    pub total: usize,
}

pub fn functional_fidelity(records: &[DecodeRecord], taxonomy: &ErrorTaxonomy) -> FunctionalFidelity {
    let mut hist: BTreeMap<ErrorCategory, usize> = ErrorCategory::ALL.iter().map(|&c| (c, 0)).collect();
    let (mut strict, mut stereo, mut failed) = (0usize, 0usize, 0usize);
    for r in records {
        match &r.decoded {
            Ok(d) => {
                let s = d.canonical == r.original.canonical;
                strict += s as usize;
                stereo += (s || d.canonical_nostereo == r.original.canonical_nostereo) as usize;
            }
            Err(text) => {
                failed += 1;
                *hist.entry(taxonomy.classify(text)).or_default() += 1;
            }
        }
    }
    let total = records.len();
    let frac = |c: usize| if total == 0 { 0.0 } else { c as f64 / total as f64 };
    FunctionalFidelity {
        strict_accuracy: frac(strict),
        stereo_accuracy: frac(stereo),
        error_histogram: hist,
        failed,
        total,
    }
}

impl FunctionalFidelity {
    /// `category,count` CSV.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("category,count\n");
        for (c, n) in &self.error_histogram {
            writeln!(out, "{},{n}", c.as_str()).unwrap();
        }
        out
    }
}

/// Everything reported by `eval-fidelity`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub l2: f64,
    pub fraction_variance_explained: f64,
    pub fraction_alive: f64,
    pub delta_loss: f64,
    /// `proxy` or `bridge`.
    pub delta_loss_source: String,
    pub functional: Option<FunctionalFidelity>,
}
