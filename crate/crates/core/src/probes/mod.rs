// SPDX-License-Identifier: MIT OR Apache-2.0

//! Statistical probes over feature and neuron activations.

pub mod decomposition;
pub mod logistic;
pub mod rank;
pub mod toxicity;

pub use decomposition::{nmf_fit, pca_fit, Nmf, NmfConfig, Pca};
pub use logistic::{fit_logistic, LogisticConfig, LogisticFit};
pub use rank::{
    correlation_summary, pairwise_redundancy, rank_average, spearman, spearman_matrix, Column, CorrelationSummary,
    Redundancy, SpearmanMatrix,
};
pub use toxicity::{aucpr, paired_t_test, toxicity_regression, RegressionModel, TTest, ToxicityResult};

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{ColumnKind, LabelMatrix};
use logistic::{column_moments, standardize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
    pub class_balanced: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 0,
            class_balanced: true,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be at least 2, got {}", self.folds)));
        }
        Ok(())
    }
}

/// Fold id per sample. Each class is shuffled separately and dealt round-robin,
/// so every fold holds `⌊n_c / folds⌋` or `⌈n_c / folds⌉` members of class `c`.
pub fn stratified_folds(labels: &[bool], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0; labels.len()];
    let mut next = 0;
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            out[i] = next % folds;
            next += 1;
        }
    }
    out
}

/// Per-sample weights `n / (2 n_c)` (or all ones).
pub fn class_weights(labels: &[bool], balanced: bool) -> Vec<f64> {
    if !balanced {
        return vec![1.0; labels.len()];
    }
    let n = labels.len() as f64;
    let pos = labels.iter().filter(|&&y| y).count() as f64;
    let neg = n - pos;
    labels
        .iter()
        .map(|&y| if y { n / (2.0 * pos) } else { n / (2.0 * neg) })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub converged: bool,
}

/// Precision, recall and F1; undefined ratios are 0.
pub fn classification_metrics(pred: &[bool], truth: &[bool]) -> (f64, f64, f64) {
    let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnn += 1,
            _ => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    (ratio(tp, tp + fp), ratio(tp, tp + fnn), ratio(2 * tp, 2 * tp + fp + fnn))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryProbe {
    pub max_f1: f64,
    pub folds: Vec<FoldMetrics>,
    pub non_converged_folds: Vec<usize>,
}

fn split(fold_of: &[usize], k: usize) -> (Vec<usize>, Vec<usize>) {
    (0..fold_of.len()).partition(|&i| fold_of[i] != k)
}

fn gather(x: &[f64], cols: usize, idx: &[usize]) -> Vec<f64> {
    idx.iter().flat_map(|&i| x[i * cols..(i + 1) * cols].iter().copied()).collect()
}

/// Cross-validated weighted logistic probe of one variable; folds are given
/// so several variables can share one assignment.
pub fn probe_with_folds(
    xs: &[f64],
    ys: &[bool],
    fold_of: &[usize],
    cv: &CvConfig,
    logit: &LogisticConfig,
) -> Result<BinaryProbe> {
    if xs.len() != ys.len() || fold_of.len() != ys.len() {
        return Err(Error::Shape("probe inputs differ in length".into()));
    }
    if !ys.iter().any(|&y| y) || ys.iter().all(|&y| y) {
        return Err(Error::DegenerateLabels("labels contain a single class".into()));
    }
    let mut folds = Vec::with_capacity(cv.folds);
    let mut non_converged = vec![];
    for k in 0..cv.folds {
        let (train, valid) = split(fold_of, k);
        let ytr: Vec<bool> = train.iter().map(|&i| ys[i]).collect();
        let yva: Vec<bool> = valid.iter().map(|&i| ys[i]).collect();
        let xtr = gather(xs, 1, &train);
        let xva = gather(xs, 1, &valid);
        let (mean, sd) = column_moments(&xtr, xtr.len(), 1);
        let ztr = standardize(&xtr, 1, &mean, &sd);
        let zva = standardize(&xva, 1, &mean, &sd);
        let w = class_weights(&ytr, cv.class_balanced);
        let (fit, converged) = match fit_logistic(&ztr, ztr.len(), 1, &ytr, &w, logit) {
            Ok(f) => {
                let c = f.converged;
                (Some(f), c)
            }
            Err(Error::DegenerateLabels(_)) => (None, false),
            Err(e) => return Err(e),
        };
        if !converged {
            non_converged.push(k);
        }
        let (precision, recall, f1) = match fit {
            Some(fit) => {
                let pred: Vec<bool> = fit.decision(&zva, 1).iter().map(|&d| d >= 0.0).collect();
                classification_metrics(&pred, &yva)
            }
            None => (0.0, 0.0, 0.0),
        };
        folds.push(FoldMetrics {
            fold: k,
            f1,
            precision,
            recall,
            converged,
        });
    }
    let max_f1 = folds.iter().map(|f| f.f1).fold(0.0, f64::max);
    Ok(BinaryProbe {
        max_f1,
        folds,
        non_converged_folds: non_converged,
    })
}

/// Stratified cross-validated logistic probe of a single variable; returns the best fold F1.
pub fn fit_logistic_single(xs: &[f64], ys: &[bool], cv: &CvConfig) -> Result<BinaryProbe> {
    cv.validate()?;
    let fold_of = stratified_folds(ys, cv.folds, cv.seed);
    probe_with_folds(xs, ys, &fold_of, cv, &LogisticConfig::default())
}

/// Column `j` of row-major `x` as f64.
pub fn column_f64(x: &[f32], cols: usize, j: usize) -> Vec<f64> {
    x.chunks_exact(cols).map(|r| r[j] as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestProbe {
    pub variable: usize,
    pub max_f1: f64,
    pub folds: Vec<FoldMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenRow {
    pub group: String,
    pub prevalence_percent: f64,
    pub feature: Option<BestProbe>,
    pub neuron: Option<BestProbe>,
    pub failed_pairs: usize,
    pub error: Option<String>,
}

/// Runs the probe over every column of `x` and keeps the best (lowest index on ties).
fn best_over(
    x: &[f32],
    cols: usize,
    ys: &[bool],
    fold_of: &[usize],
    cv: &CvConfig,
    logit: &LogisticConfig,
) -> (Option<BestProbe>, usize) {
    let results: Vec<Result<BinaryProbe>> = (0..cols)
        .into_par_iter()
        .map(|j| probe_with_folds(&column_f64(x, cols, j), ys, fold_of, cv, logit))
        .collect();
    let mut best: Option<BestProbe> = None;
    let mut failed = 0;
    for (j, r) in results.into_iter().enumerate() {
        match r {
            Ok(p) => {
                if best.as_ref().is_none_or(|b| p.max_f1 > b.max_f1) {
                    best = Some(BestProbe {
                        variable: j,
                        max_f1: p.max_f1,
                        folds: p.folds,
                    });
                }
            }
            Err(_) => failed += 1,
        }
    }
    (best, failed)
}

/// For every binary label column, the best single-feature and single-neuron probes.
pub fn substructure_screen(
    features: &[f32],
    n_features: usize,
    neurons: &[f32],
    n_neurons: usize,
    labels: &LabelMatrix,
    cv: &CvConfig,
) -> Result<Vec<ScreenRow>> {
    cv.validate()?;
    let count = labels.count();
    if features.len() != count * n_features || neurons.len() != count * n_neurons {
        return Err(Error::Shape("activation matrices do not match the label row count".into()));
    }
    let logit = LogisticConfig::default();
    let mut rows = vec![];
    for (t, name) in labels.targets().iter().enumerate() {
        if labels.kinds()[t] != ColumnKind::Binary {
            return Err(Error::Config(format!("label column {name} is not binary")));
        }
        let ys = labels.binary_column(t)?;
        let positives = ys.iter().filter(|&&y| y).count();
        let prevalence_percent = if count == 0 { 0.0 } else { 100.0 * positives as f64 / count as f64 };
        if positives == 0 || positives == count {
            rows.push(ScreenRow {
                group: name.clone(),
                prevalence_percent,
                feature: None,
                neuron: None,
                failed_pairs: n_features + n_neurons,
                error: Some("degenerate labels: single class".into()),
            });
            continue;
        }
        let fold_of = stratified_folds(&ys, cv.folds, cv.seed);
        let (feature, f_fail) = best_over(features, n_features, &ys, &fold_of, cv, &logit);
        let (neuron, n_fail) = best_over(neurons, n_neurons, &ys, &fold_of, cv, &logit);
        rows.push(ScreenRow {
            group: name.clone(),
            prevalence_percent,
            feature,
            neuron,
            failed_pairs: f_fail + n_fail,
            error: None,
        });
    }
    Ok(rows)
}

/// `group,feature,feature_max_f1,neuron,neuron_max_f1,prevalence_percent` CSV.
pub fn screen_csv(rows: &[ScreenRow]) -> String {
    let mut out = String::from("group,feature,feature_max_f1,neuron,neuron_max_f1,prevalence_percent\n");
    let cell = |b: &Option<BestProbe>| match b {
        Some(b) => (b.variable.to_string(), format!("{:.6}", b.max_f1)),
        None => (String::new(), String::new()),
    };
    for r in rows {
        let (fi, ff) = cell(&r.feature);
        let (ni, nf) = cell(&r.neuron);
        writeln!(out, "{},{fi},{ff},{ni},{nf},{:.4}", r.group, r.prevalence_percent).unwrap();
    }
    out
}
