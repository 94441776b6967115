// SPDX-License-Identifier: MIT OR Apache-2.0

//! Tanimoto similarity, empirical null distributions and target-set overlap.
//!
//! Null distribution file:
//!
//! ```text
//! "SAEN" | version u32 = 1 | header_len u32 | header JSON | n_pairs × f32 (ascending)
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::bytes::{put_f32s, ByteReader};

pub const NULL_MAGIC: &[u8; 4] = b"SAEN";
pub const NULL_VERSION: u32 = 1;
/// Pairs drawn per independently seeded block.
pub const NULL_BLOCK: usize = 1 << 16;

/// Set-bit indices of a bit vector, strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    nbits: u32,
    bits: Vec<u32>,
}

impl Fingerprint {
    pub fn new(nbits: u32, bits: Vec<u32>) -> Result<Self> {
        if bits.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Shape("fingerprint bits must be strictly increasing".into()));
        }
        if bits.last().is_some_and(|&b| b >= nbits) {
            return Err(Error::Shape(format!("fingerprint bit out of range for length {nbits}")));
        }
        Ok(Self { nbits, bits })
    }

    /// Sorts and deduplicates before validating.
    pub fn from_unsorted(nbits: u32, mut bits: Vec<u32>) -> Result<Self> {
        bits.sort_unstable();
        bits.dedup();
        Self::new(nbits, bits)
    }

    pub fn nbits(&self) -> u32 {
        self.nbits
    }

    pub fn bits(&self) -> &[u32] {
        &self.bits
    }
}

fn intersection_size(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// `|A∩B| / |A∪B|`; two empty fingerprints give 0.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64> {
    if a.nbits != b.nbits {
        return Err(Error::Shape(format!("fingerprint lengths {} and {} differ", a.nbits, b.nbits)));
    }
    let inter = intersection_size(&a.bits, &b.bits);
    let union = a.bits.len() + b.bits.len() - inter;
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FingerprintParams {
    pub radius: u32,
    pub nbits: u32,
    pub chirality: bool,
}

impl Default for FingerprintParams {
    fn default() -> Self {
        Self {
            radius: 2,
            nbits: 4096,
            chirality: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NullHeader {
    pub seed: u64,
    pub n_pairs: u64,
    pub molecules: u64,
    pub params: FingerprintParams,
    pub mean: f64,
    /// Sample standard deviation.
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NullDistribution {
    pub header: NullHeader,
    samples: Vec<f32>,
}

/// The `(i, j)` pairs of block `block`: uniform over distinct molecules.
pub fn null_block_pairs(molecules: usize, n_pairs: usize, seed: u64, block: usize) -> Vec<(usize, usize)> {
    let start = block * NULL_BLOCK;
    let len = NULL_BLOCK.min(n_pairs.saturating_sub(start));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block as u64);
    (0..len)
        .map(|_| {
            let i = rng.random_range(0..molecules);
            let mut j = rng.random_range(0..molecules - 1);
            if j >= i {
                j += 1;
            }
            (i, j)
        })
        .collect()
}

/// Samples `n_pairs` random distinct-molecule pairs and records their similarities.
pub fn build_null(fps: &[Fingerprint], n_pairs: usize, seed: u64, params: FingerprintParams) -> Result<NullDistribution> {
    if fps.len() < 2 {
        return Err(Error::EmptyData("null distribution needs at least two molecules".into()));
    }
    if n_pairs == 0 {
        return Err(Error::EmptyData("null distribution needs at least one pair".into()));
    }
    if let Some(f) = fps.iter().find(|f| f.nbits != params.nbits) {
        return Err(Error::Shape(format!("fingerprint has {} bits, expected {}", f.nbits, params.nbits)));
    }
    let blocks = n_pairs.div_ceil(NULL_BLOCK);
    let sims: Vec<Vec<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            null_block_pairs(fps.len(), n_pairs, seed, b)
                .into_iter()
                .map(|(i, j)| tanimoto(&fps[i], &fps[j]).expect("lengths checked"))
                .collect()
        })
        .collect();
    let (mut count, mut mean, mut m2) = (0u64, 0.0f64, 0.0f64);
    for &s in sims.iter().flatten() {
        count += 1;
        let delta = s - mean;
        mean += delta / count as f64;
        m2 += delta * (s - mean);
    }
    let sd = if count > 1 { (m2 / (count - 1) as f64).sqrt() } else { 0.0 };
    let mut samples: Vec<f32> = sims.into_iter().flatten().map(|s| s as f32).collect();
    samples.sort_by(f32::total_cmp);
    Ok(NullDistribution {
        header: NullHeader {
            seed,
            n_pairs: n_pairs as u64,
            molecules: fps.len() as u64,
            params,
            mean,
            sd,
        },
        samples,
    })
}

impl NullDistribution {
    pub fn from_parts(header: NullHeader, mut samples: Vec<f32>) -> Result<Self> {
        if samples.len() as u64 != header.n_pairs {
            return Err(Error::Shape("sample count differs from header".into()));
        }
        if samples.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::Shape("similarity samples must lie in [0, 1]".into()));
        }
        samples.sort_by(f32::total_cmp);
        Ok(Self { header, samples })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Right-tailed add-one estimate `(#{s ≥ observed} + 1) / (N + 1)`.
    pub fn empirical_p(&self, observed: f64) -> f64 {
        let below = self.samples.partition_point(|&s| (s as f64) < observed);
        let at_or_above = self.samples.len() - below;
        (at_or_above + 1) as f64 / (self.samples.len() + 1) as f64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + header.len() + 4 * self.samples.len());
        out.extend_from_slice(NULL_MAGIC);
        out.extend_from_slice(&NULL_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        put_f32s(&mut out, &self.samples);
        out
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(path, bytes);
        r.expect_magic(NULL_MAGIC)?;
        let version = r.u32("version")?;
        if version != NULL_VERSION {
            return Err(r.error_at(4, format!("unsupported null version {version}")));
        }
        let len = r.u32("header length")? as usize;
        let at = r.offset();
        let header: NullHeader = serde_json::from_slice(r.take(len, "header")?)
            .map_err(|e| Error::format(path, at, format!("bad header: {e}")))?;
        let n = usize::try_from(header.n_pairs).map_err(|_| r.error("sample count overflows"))?;
        let samples = r.f32s(n, 1, "samples")?;
        r.finish()?;
        if samples.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::format(path, at + len as u64, "samples are not sorted"));
        }
        Self::from_parts(header, samples).map_err(|e| Error::format(path, 0, e.to_string()))
    }

    /// Equal-width histogram over [0, 1]: `bin_start,bin_end,count`.
    pub fn histogram_csv(&self, bins: usize) -> String {
        let bins = bins.max(1);
        let mut counts = vec![0usize; bins];
        for &s in &self.samples {
            let b = ((s as f64 * bins as f64) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let mut out = String::from("bin_start,bin_end,count\n");
        for (b, c) in counts.iter().enumerate() {
            writeln!(out, "{:.6},{:.6},{c}", b as f64 / bins as f64, (b + 1) as f64 / bins as f64).unwrap();
        }
        out
    }
}

pub fn write_null(null: &NullDistribution, path: &Path) -> Result<()> {
    crate::io::write_file(path, &null.to_bytes())
}

pub fn read_null(path: &Path) -> Result<NullDistribution> {
    NullDistribution::from_bytes(path, &crate::io::read_file(path)?)
}

/// `⌈z²σ²/ε²⌉`, the number of samples for a margin of error `ε` at `z`.
pub fn required_sample_size(z: f64, sigma: f64, epsilon: f64) -> Result<u64> {
    if !(z.is_finite() && sigma.is_finite() && epsilon.is_finite()) || z < 0.0 || sigma < 0.0 || epsilon <= 0.0 {
        return Err(Error::Config("sample size needs finite z, σ ≥ 0 and ε > 0".into()));
    }
    let v = (z * sigma / epsilon).powi(2);
    let r = v.round();
    // Exact products can land a hair above an integer.
    Ok(if (v - r).abs() <= 1e-9 * r.max(1.0) { r as u64 } else { v.ceil() as u64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTargets {
    pub feature: usize,
    pub molecules: Vec<usize>,
    pub shared: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetIntersection {
    pub threshold: f64,
    pub min_molecules: usize,
    pub features: Vec<FeatureTargets>,
    /// Feature with the largest non-empty shared set, lowest index on ties.
    pub best: Option<usize>,
}

/// For each feature: the molecules whose activation, divided by the feature's
/// dataset maximum, exceeds `threshold`, and the targets all of them share.
/// Features with fewer than `min_molecules` such molecules get an empty set.
pub fn target_set_intersection(
    acts: &[f32],
    p: usize,
    threshold: f64,
    targets: &[BTreeSet<String>],
    min_molecules: usize,
) -> Result<TargetIntersection> {
    let count = targets.len();
    if acts.len() != count * p {
        return Err(Error::Shape("activations do not match the annotation count".into()));
    }
    let mut max = vec![0.0f32; p];
    for r in acts.chunks_exact(p) {
        for (m, &v) in max.iter_mut().zip(r) {
            *m = m.max(v);
        }
    }
    let features: Vec<FeatureTargets> = (0..p)
        .map(|j| {
            let molecules: Vec<usize> = if max[j] > 0.0 {
                (0..count)
                    .filter(|&i| (acts[i * p + j] / max[j]) as f64 > threshold)
                    .collect()
            } else {
                vec![]
            };
            let shared = if molecules.len() < min_molecules.max(1) {
                BTreeSet::new()
            } else {
                let mut it = molecules.iter();
                let first = targets[*it.next().expect("non-empty")].clone();
                it.fold(first, |acc, &i| acc.intersection(&targets[i]).cloned().collect())
            };
            FeatureTargets {
                feature: j,
                molecules,
                shared,
            }
        })
        .collect();
    let best = features
        .iter()
        .filter(|f| !f.shared.is_empty())
        .max_by(|a, b| a.shared.len().cmp(&b.shared.len()).then(b.feature.cmp(&a.feature)))
        .map(|f| f.feature);
    Ok(TargetIntersection {
        threshold,
        min_molecules,
        features,
        best,
    })
}
