// SPDX-License-Identifier: MIT OR Apache-2.0

//! Feature landscape statistics and ablation campaigns.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bridge::Bridge;
use crate::error::{Error, Result};
use crate::io::{EmbeddingShard, SaeCheckpoint};
use crate::sae::{ablate_feature, SparseCode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub feature: u32,
    pub activating_count: usize,
    pub frequency: f64,
    pub max_activation: f64,
    /// Mean of nonzero activations divided by the feature's dataset maximum.
    pub mean_normalized_activation: Option<f64>,
    /// Population sd over mean of the nonzero activations; needs two of them.
    pub coefficient_of_variation: Option<f64>,
}

/// Per-feature activation statistics over a dataset of codes.
pub fn feature_landscape(codes: &[SparseCode<f32>], n: usize) -> Result<Vec<FeatureStats>> {
    if codes.is_empty() {
        return Err(Error::EmptyData("landscape needs at least one code".into()));
    }
    let mut count = vec![0usize; n];
    let mut sum = vec![0.0f64; n];
    let mut sumsq = vec![0.0f64; n];
    let mut max = vec![0.0f64; n];
    for c in codes {
        if c.dict_size() != n {
            return Err(Error::Shape(format!("code has dictionary size {}, expected {n}", c.dict_size())));
        }
        for (i, v) in c.iter() {
            if v > 0.0 {
                let (i, v) = (i as usize, v as f64);
                count[i] += 1;
                sum[i] += v;
                sumsq[i] += v * v;
                max[i] = max[i].max(v);
            }
        }
    }
    let total = codes.len() as f64;
    Ok((0..n)
        .map(|i| {
            let k = count[i];
            let mean = if k > 0 { Some(sum[i] / k as f64) } else { None };
            let cv = mean.filter(|_| k >= 2).map(|m| {
                let var = (sumsq[i] / k as f64 - m * m).max(0.0);
                let cv = var.sqrt() / m;
                // Cancellation noise on constant activations.
                if cv < 1e-7 { 0.0 } else { cv }
            });
            FeatureStats {
                feature: i as u32,
                activating_count: k,
                frequency: k as f64 / total,
                max_activation: max[i],
                mean_normalized_activation: mean.map(|m| (m / max[i]).min(1.0)),
                coefficient_of_variation: cv,
            }
        })
        .collect())
}

/// `feature,frequency,mean_norm_act,cv` CSV; undefined cells are empty.
pub fn landscape_csv(stats: &[FeatureStats]) -> String {
    let mut out = String::from("feature,frequency,mean_norm_act,cv\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.9}")).unwrap_or_default();
    for s in stats {
        writeln!(
            out,
            "{},{:.9},{},{}",
            s.feature,
            s.frequency,
            opt(s.mean_normalized_activation),
            opt(s.coefficient_of_variation)
        )
        .unwrap();
    }
    out
}

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    strsim::levenshtein(a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "lowercase")]
pub enum Intervention {
    Feature(u32),
    Neuron(u32),
}

impl fmt::Display for Intervention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Intervention::Feature(i) => write!(f, "feature:{i}"),
            Intervention::Neuron(i) => write!(f, "neuron:{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Original,
    Steered,
    Invalid,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Original => "original",
            Category::Steered => "steered",
            Category::Invalid => "invalid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringOutcome {
    pub intervention: Intervention,
    pub molecule: usize,
    pub category: Category,
    /// Canonical decoded text, absent for invalid outcomes.
    pub decoded: Option<String>,
    pub error: Option<String>,
    /// 0 for original, the edit distance for steered, absent for invalid.
    pub levenshtein: Option<usize>,
}

/// Classifies one decoded molecule against the original canonical text.
pub fn categorize(original: &str, decoded: std::result::Result<String, String>) -> (Category, Option<String>, Option<String>, Option<usize>) {
    match decoded {
        Err(e) => (Category::Invalid, None, Some(e), None),
        Ok(s) if s == original => (Category::Original, Some(s), None, Some(0)),
        Ok(s) => {
            let d = levenshtein(original, &s);
            (Category::Steered, Some(s), None, Some(d))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    /// Molecules per feature, or per tail for neurons.
    pub max_molecules: usize,
    /// Rows per bridge request; interventions never split across requests.
    pub batch_rows: usize,
    pub seed: u64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            max_molecules: 100,
            batch_rows: 1024,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CampaignTask {
    pub intervention: Intervention,
    /// Dataset rows, ascending.
    pub rows: Vec<usize>,
}

enum Source<'a> {
    Features {
        ck: &'a SaeCheckpoint,
        codes: &'a [SparseCode<f32>],
    },
    Neurons {
        data: &'a EmbeddingShard,
        means: Vec<f32>,
    },
}

/// A planned set of interventions and the originals they are judged against.
pub struct Campaign<'a> {
    source: Source<'a>,
    tasks: Vec<CampaignTask>,
    originals: &'a [String],
    d_model: usize,
}

fn sample_rows(rows: Vec<usize>, max: usize, seed: u64, stream: u64) -> Vec<usize> {
    if rows.len() <= max {
        return rows;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, rows.len(), max)
        .into_iter()
        .map(|i| rows[i])
        .collect();
    picked.sort_unstable();
    picked
}

impl<'a> Campaign<'a> {
    /// Feature ablations over `codes` (one per original row). `features` limits
    /// the interventions; by default every feature that fires at least once.
    pub fn features(
        ck: &'a SaeCheckpoint,
        codes: &'a [SparseCode<f32>],
        originals: &'a [String],
        features: Option<&[u32]>,
        cfg: &CampaignConfig,
    ) -> Result<Self> {
        if codes.len() != originals.len() {
            return Err(Error::Shape("codes and originals differ in length".into()));
        }
        let n = ck.config.dict_size;
        let mut active: Vec<Vec<usize>> = vec![vec![]; n];
        for (row, c) in codes.iter().enumerate() {
            for (i, v) in c.iter() {
                if v > 0.0 {
                    active[i as usize].push(row);
                }
            }
        }
        let chosen: Vec<u32> = match features {
            Some(f) => {
                if let Some(&bad) = f.iter().find(|&&i| i as usize >= n) {
                    return Err(Error::Config(format!("feature {bad} out of range for dictionary of {n}")));
                }
                f.to_vec()
            }
            None => (0..n as u32).filter(|&i| !active[i as usize].is_empty()).collect(),
        };
        let tasks = chosen
            .into_iter()
            .map(|f| CampaignTask {
                intervention: Intervention::Feature(f),
                rows: sample_rows(active[f as usize].clone(), cfg.max_molecules, cfg.seed, f as u64),
            })
            .collect();
        Ok(Self {
            source: Source::Features { ck, codes },
            tasks,
            originals,
            d_model: ck.d_model(),
        })
    }

    /// Neuron ablations: each neuron is set to its dataset mean on its
    /// `max_molecules` highest and lowest rows.
    pub fn neurons(data: &'a EmbeddingShard, originals: &'a [String], neurons: Option<&[u32]>, cfg: &CampaignConfig) -> Result<Self> {
        if data.count() != originals.len() {
            return Err(Error::Shape("embeddings and originals differ in length".into()));
        }
        if data.count() == 0 {
            return Err(Error::EmptyData("no molecules".into()));
        }
        let d = data.d_model();
        let mut sums = vec![0.0f64; d];
        for r in data.rows() {
            for (s, &v) in sums.iter_mut().zip(r) {
                *s += v as f64;
            }
        }
        let means: Vec<f32> = sums.iter().map(|s| (s / data.count() as f64) as f32).collect();
        let chosen: Vec<u32> = match neurons {
            Some(ns) => {
                if let Some(&bad) = ns.iter().find(|&&i| i as usize >= d) {
                    return Err(Error::Config(format!("neuron {bad} out of range for d_model {d}")));
                }
                ns.to_vec()
            }
            None => (0..d as u32).collect(),
        };
        let tasks = chosen
            .into_iter()
            .map(|j| {
                let mut order: Vec<usize> = (0..data.count()).collect();
                order.sort_by(|&a, &b| data.row(a)[j as usize].total_cmp(&data.row(b)[j as usize]).then(a.cmp(&b)));
                let m = cfg.max_molecules.min(order.len());
                let mut rows: Vec<usize> = order[..m].iter().chain(&order[order.len() - m..]).copied().collect();
                rows.sort_unstable();
                rows.dedup();
                CampaignTask {
                    intervention: Intervention::Neuron(j),
                    rows,
                }
            })
            .collect();
        Ok(Self {
            source: Source::Neurons { data, means },
            tasks,
            originals,
            d_model: d,
        })
    }

    pub fn tasks(&self) -> &[CampaignTask] {
        &self.tasks
    }

    /// Raw-scale vectors to decode for one task, row-major.
    pub fn vectors(&self, task: &CampaignTask) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(task.rows.len() * self.d_model);
        for &row in &task.rows {
            match (&self.source, task.intervention) {
                (Source::Features { ck, codes }, Intervention::Feature(f)) => {
                    out.extend(ck.decode_raw(&ablate_feature(&codes[row], f))?);
                }
                (Source::Neurons { data, means }, Intervention::Neuron(j)) => {
                    let mut v = data.row(row).to_vec();
                    v[j as usize] = means[j as usize];
                    out.extend(v);
                }
                _ => return Err(Error::Config("intervention kind does not match campaign".into())),
            }
        }
        Ok(out)
    }

    /// Runs tasks from index `start`, appending outcomes in (task, row) order.
    /// A bridge failure aborts with [`Error::CampaignAborted`] whose cursor is
    /// the first task without outcomes; pass it back as `start` to resume.
    pub fn run(&self, bridge: &mut Bridge, workdir: &Path, start: usize, batch_rows: usize, out: &mut Vec<SteeringOutcome>) -> Result<()> {
        let mut t = start;
        while t < self.tasks.len() {
            let first = t;
            let mut rows = 0;
            let mut vectors = vec![];
            while t < self.tasks.len() && (rows == 0 || rows + self.tasks[t].rows.len() <= batch_rows.max(1)) {
                vectors.extend(self.vectors(&self.tasks[t])?);
                rows += self.tasks[t].rows.len();
                t += 1;
            }
            let batch = self
                .decode_batch(bridge, workdir, first, rows, vectors)
                .map_err(|e| abort(first, e))?;
            let mut it = batch.into_iter();
            for task in &self.tasks[first..t] {
                for &row in &task.rows {
                    let (category, decoded, error, lev) = categorize(&self.originals[row], it.next().expect("one result per row"));
                    out.push(SteeringOutcome {
                        intervention: task.intervention,
                        molecule: row,
                        category,
                        decoded,
                        error,
                        levenshtein: lev,
                    });
                }
            }
        }
        Ok(())
    }

    fn decode_batch(
        &self,
        bridge: &mut Bridge,
        workdir: &Path,
        first: usize,
        rows: usize,
        vectors: Vec<f32>,
    ) -> Result<Vec<std::result::Result<String, String>>> {
        if rows == 0 {
            return Ok(vec![]);
        }
        let shard = EmbeddingShard::new(self.d_model, vectors)?;
        let path = workdir.join(format!("campaign-{first:06}.saev"));
        crate::io::write_file(&path, &shard.to_bytes())?;
        let decoded = bridge.decode(&path, rows);
        let _ = std::fs::remove_file(&path);
        let decoded = decoded?;
        let ok: Vec<String> = decoded.iter().filter_map(|d| d.as_ref().ok().cloned()).collect();
        let mut canon = if ok.is_empty() { vec![] } else { bridge.canonicalize(&ok)? }.into_iter();
        Ok(decoded
            .into_iter()
            .map(|d| d.and_then(|_| canon.next().expect("one canonical form per decoded row").map(|c| c.canonical)))
            .collect())
    }
}

fn abort(cursor: usize, e: Error) -> Error {
    Error::CampaignAborted {
        cursor,
        source: Box::new(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionSummary {
    pub intervention: Intervention,
    pub molecules: usize,
    pub original: usize,
    pub steered: usize,
    pub invalid: usize,
    pub original_rate: f64,
    pub steered_rate: f64,
    pub invalid_rate: f64,
    /// Over steered outcomes only.
    pub levenshtein_mean: Option<f64>,
    pub levenshtein_sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub interventions: Vec<InterventionSummary>,
    pub molecules: usize,
    pub original: usize,
    pub steered: usize,
    pub invalid: usize,
    pub interventions_with_steered: usize,
    pub interventions_with_invalid: usize,
}

/// Per-intervention rates and Levenshtein statistics, in first-seen order.
pub fn summarize(outcomes: &[SteeringOutcome]) -> CampaignSummary {
    let mut groups: Vec<(Intervention, Vec<&SteeringOutcome>)> = vec![];
    for o in outcomes {
        match groups.last_mut() {
            Some((i, v)) if *i == o.intervention => v.push(o),
            _ => groups.push((o.intervention, vec![o])),
        }
    }
    let interventions: Vec<InterventionSummary> = groups
        .into_iter()
        .map(|(intervention, v)| {
            let n = v.len();
            let count = |c: Category| v.iter().filter(|o| o.category == c).count();
            let (original, steered, invalid) = (count(Category::Original), count(Category::Steered), count(Category::Invalid));
            let lev: Vec<f64> = v
                .iter()
                .filter(|o| o.category == Category::Steered)
                .filter_map(|o| o.levenshtein.map(|d| d as f64))
                .collect();
            let (mean, sd) = if lev.is_empty() {
                (None, None)
            } else {
                let (m, s) = crate::probes::rank::mean_sd(&lev);
                (Some(m), Some(s))
            };
            let rate = |c: usize| c as f64 / n as f64;
            InterventionSummary {
                intervention,
                molecules: n,
                original,
                steered,
                invalid,
                original_rate: rate(original),
                steered_rate: rate(steered),
                invalid_rate: rate(invalid),
                levenshtein_mean: mean,
                levenshtein_sd: sd,
            }
        })
        .collect();
    CampaignSummary {
        molecules: outcomes.len(),
        original: interventions.iter().map(|s| s.original).sum(),
        steered: interventions.iter().map(|s| s.steered).sum(),
        invalid: interventions.iter().map(|s| s.invalid).sum(),
        interventions_with_steered: interventions.iter().filter(|s| s.steered > 0).count(),
        interventions_with_invalid: interventions.iter().filter(|s| s.invalid > 0).count(),
        interventions,
    }
}

/// `intervention,molecule,category,levenshtein` CSV.
pub fn outcomes_csv(outcomes: &[SteeringOutcome]) -> String {
    let mut out = String::from("intervention,molecule,category,levenshtein\n");
    for o in outcomes {
        let lev = o.levenshtein.map(|d| d.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{lev}", o.intervention, o.molecule, o.category.as_str()).unwrap();
    }
    out
}

/// `intervention,invalid_rate,steered_rate,levenshtein_sd` CSV.
pub fn steering_scatter_csv(summary: &CampaignSummary) -> String {
    let mut out = String::from("intervention,invalid_rate,steered_rate,levenshtein_sd\n");
    for s in &summary.interventions {
        let sd = s.levenshtein_sd.map(|v| format!("{v:.9}")).unwrap_or_default();
        writeln!(out, "{},{:.9},{:.9},{sd}", s.intervention, s.invalid_rate, s.steered_rate).unwrap();
    }
    out
}
