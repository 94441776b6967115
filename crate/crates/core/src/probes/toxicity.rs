// SPDX-License-Identifier: MIT OR Apache-2.0

//! Multivariate toxicity regression, AUCpr and the paired t-test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::logistic::{column_moments, fit_logistic, standardize, LogisticConfig};
use super::rank::mean_sd;
use super::{class_weights, stratified_folds, CvConfig};
use crate::error::{Error, Result};

/// Area under the precision-recall curve. Thresholds sweep every distinct
/// score from high to low; points are joined by trapezoids starting at (0, 1).
pub fn aucpr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape("scores and labels differ in length".into()));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 {
        return Err(Error::DegenerateLabels("no positive labels".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_r, mut prev_p) = (0.0, 1.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let r = tp as f64 / positives as f64;
        let p = tp as f64 / (tp + fp) as f64;
        area += (r - prev_r) * (p + prev_p) / 2.0;
        prev_r = r;
        prev_p = p;
    }
    Ok(area)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    /// Coefficients on standardized inputs; the intercept is separate.
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Wald p-values, present only for a converged fit.
    pub p_values: Option<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToxicityResult {
    pub prevalence: f64,
    pub aucpr_folds: Vec<f64>,
    pub aucpr_mean: f64,
    pub aucpr_sd: f64,
    pub significant_count: usize,
    pub alpha: f64,
    pub model: RegressionModel,
}

fn gather_rows(x: &[f64], cols: usize, idx: &[usize]) -> Vec<f64> {
    idx.iter().flat_map(|&i| x[i * cols..(i + 1) * cols].iter().copied()).collect()
}

/// Cross-validated multivariate weighted logistic regression plus a full-data
/// fit whose Wald p-values give the number of significant coefficients.
pub fn toxicity_regression(x: &[f32], cols: usize, labels: &[bool], cv: &CvConfig) -> Result<ToxicityResult> {
    cv.validate()?;
    let count = labels.len();
    if cols == 0 || x.len() != count * cols {
        return Err(Error::Shape("activation matrix does not match labels".into()));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 || positives == count {
        return Err(Error::DegenerateLabels("toxicity labels contain a single class".into()));
    }
    let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let logit = LogisticConfig::default();
    let fold_of = stratified_folds(labels, cv.folds, cv.seed);
    let mut aucs = vec![];
    for k in 0..cv.folds {
        let (train, valid): (Vec<usize>, Vec<usize>) = (0..count).partition(|&i| fold_of[i] != k);
        let xtr = gather_rows(&x, cols, &train);
        let xva = gather_rows(&x, cols, &valid);
        let ytr: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
        let yva: Vec<bool> = valid.iter().map(|&i| labels[i]).collect();
        let (mean, sd) = column_moments(&xtr, train.len(), cols);
        let fit = fit_logistic(
            &standardize(&xtr, cols, &mean, &sd),
            train.len(),
            cols,
            &ytr,
            &class_weights(&ytr, cv.class_balanced),
            &logit,
        )?;
        if !fit.converged {
            return Err(Error::NotConverged {
                iterations: fit.iterations,
                last_change: last_change(&fit.trace),
                trace: fit.trace,
            });
        }
        if yva.iter().any(|&y| y) {
            aucs.push(aucpr(&fit.decision(&standardize(&xva, cols, &mean, &sd), cols), &yva)?);
        }
    }
    let (mean, sd) = column_moments(&x, count, cols);
    let full = fit_logistic(
        &standardize(&x, cols, &mean, &sd),
        count,
        cols,
        labels,
        &class_weights(labels, cv.class_balanced),
        &logit,
    )?;
    if !full.converged {
        return Err(Error::NotConverged {
            iterations: full.iterations,
            last_change: last_change(&full.trace),
            trace: full.trace,
        });
    }
    let (se, p) = full.wald()?;
    let alpha = 0.05;
    let significant_count = p[1..].iter().filter(|&&v| v < alpha).count();
    let (aucpr_mean, aucpr_sd) = mean_sd(&aucs);
    Ok(ToxicityResult {
        prevalence: positives as f64 / count as f64,
        aucpr_folds: aucs,
        aucpr_mean,
        aucpr_sd,
        significant_count,
        alpha,
        model: RegressionModel {
            intercept: full.beta[0],
            coefficients: full.beta[1..].to_vec(),
            std_errors: se[1..].to_vec(),
            p_values: Some(p[1..].to_vec()),
            converged: true,
            iterations: full.iterations,
        },
    })
}

fn last_change(trace: &[f64]) -> f64 {
    match trace {
        [.., a, b] => (a - b).abs(),
        _ => f64::NAN,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub mean_difference: f64,
}

/// Two-sided paired t-test of `a − b`. Identical inputs give `t = 0, p = 1`;
/// a constant non-zero difference gives `t = ±∞, p = 0`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Shape("paired samples differ in length".into()));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::EmptyData("paired t-test needs at least two pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let df = (n - 1) as f64;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TTest {
                t: 0.0,
                df,
                p: 1.0,
                mean_difference: 0.0,
            }
        } else {
            TTest {
                t: mean.signum() * f64::INFINITY,
                df,
                p: 0.0,
                mean_difference: mean,
            }
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    Ok(TTest {
        t,
        df,
        p: (2.0 * dist.sf(t.abs())).min(1.0),
        mean_difference: mean,
    })
}
