// SPDX-License-Identifier: MIT OR Apache-2.0

//! Weighted ridge logistic regression fitted by Newton/IRLS with step halving.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticConfig {
    /// L2 penalty applied to every coefficient, intercept included.
    pub ridge: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            ridge: 1e-4,
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

/// Fitted coefficients; `beta[0]` is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub beta: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Penalized objective after every accepted step, starting with the initial value.
    pub trace: Vec<f64>,
    hessian: DMatrix<f64>,
}

fn log1pexp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Design matrix with a leading column of ones.
pub(crate) fn design(x: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols + 1, |i, j| if j == 0 { 1.0 } else { x[i * cols + j - 1] })
}

fn objective(xd: &DMatrix<f64>, y: &[bool], w: &[f64], beta: &DVector<f64>, ridge: f64) -> f64 {
    let eta = xd * beta;
    let nll: f64 = eta
        .iter()
        .zip(y)
        .zip(w)
        .map(|((&e, &yi), &wi)| wi * (log1pexp(e) - if yi { e } else { 0.0 }))
        .sum();
    nll + 0.5 * ridge * beta.norm_squared()
}

fn hessian(xd: &DMatrix<f64>, w: &[f64], eta: &DVector<f64>, ridge: f64) -> DMatrix<f64> {
    let mut xs = xd.clone();
    for (i, mut row) in xs.row_iter_mut().enumerate() {
        let p = sigmoid(eta[i]);
        row *= (w[i] * p * (1.0 - p)).sqrt();
    }
    let mut h = xs.transpose() * &xs;
    for j in 0..h.nrows() {
        h[(j, j)] += ridge;
    }
    h
}

/// Fits `P(y=1) = σ(β₀ + xβ)` on row-major `x` (`rows × cols`) with per-row weights.
pub fn fit_logistic(x: &[f64], rows: usize, cols: usize, y: &[bool], w: &[f64], cfg: &LogisticConfig) -> Result<LogisticFit> {
    if x.len() != rows * cols || y.len() != rows || w.len() != rows {
        return Err(Error::Shape("logistic inputs have inconsistent lengths".into()));
    }
    if !y.iter().any(|&v| v) || y.iter().all(|&v| v) {
        return Err(Error::DegenerateLabels("logistic fit needs both classes".into()));
    }
    let xd = design(x, rows, cols);
    let mut beta = DVector::<f64>::zeros(cols + 1);
    let mut obj = objective(&xd, y, w, &beta, cfg.ridge);
    let mut trace = vec![obj];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let eta = &xd * &beta;
        let resid = DVector::from_iterator(rows, (0..rows).map(|i| w[i] * (sigmoid(eta[i]) - y[i] as u8 as f64)));
        let grad = xd.transpose() * resid + &beta * cfg.ridge;
        let h = hessian(&xd, w, &eta, cfg.ridge);
        let Some(chol) = h.cholesky() else {
            break;
        };
        let delta = chol.solve(&grad);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = &beta - &delta * t;
            let cand_obj = objective(&xd, y, w, &cand, cfg.ridge);
            if cand_obj.is_finite() && cand_obj <= obj + 1e-12 * obj.abs() {
                accepted = Some((cand, cand_obj));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, cand_obj)) = accepted else {
            converged = grad.amax() <= cfg.tol.sqrt();
            break;
        };
        let step = (&cand - &beta).amax();
        let change = obj - cand_obj;
        beta = cand;
        obj = cand_obj;
        trace.push(obj);
        if step <= cfg.tol * (1.0 + beta.amax()) || change <= 1e-14 * (1.0 + obj.abs()) {
            converged = true;
            break;
        }
    }
    let eta = &xd * &beta;
    let hessian = hessian(&xd, w, &eta, cfg.ridge);
    Ok(LogisticFit {
        beta: beta.iter().copied().collect(),
        converged,
        iterations,
        trace,
        hessian,
    })
}

impl LogisticFit {
    /// Linear predictor for row-major `x`.
    pub fn decision(&self, x: &[f64], cols: usize) -> Vec<f64> {
        x.chunks_exact(cols)
            .map(|r| self.beta[0] + r.iter().zip(&self.beta[1..]).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    /// Standard errors and two-sided Wald p-values from the inverse of the
    /// penalized observed information at the optimum.
    pub fn wald(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let inv = self
            .hessian
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Shape("information matrix is not positive definite".into()))?
            .inverse();
        let normal = Normal::standard();
        let se: Vec<f64> = (0..self.beta.len()).map(|j| inv[(j, j)].max(0.0).sqrt()).collect();
        let p = self
            .beta
            .iter()
            .zip(&se)
            .map(|(&b, &s)| {
                if s == 0.0 {
                    if b == 0.0 { 1.0 } else { 0.0 }
                } else {
                    (2.0 * normal.sf((b / s).abs())).min(1.0)
                }
            })
            .collect();
        Ok((se, p))
    }
}

/// Column means and population sds of row-major `x`.
pub(crate) fn column_moments(x: &[f64], rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; cols];
    for r in x.chunks_exact(cols) {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut var = vec![0.0; cols];
    for r in x.chunks_exact(cols) {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    (mean, var.into_iter().map(|v| (v / rows as f64).sqrt()).collect())
}

/// Applies `(x - mean) / sd`; columns with zero sd become zero.
pub(crate) fn standardize(x: &[f64], cols: usize, mean: &[f64], sd: &[f64]) -> Vec<f64> {
    x.chunks_exact(cols)
        .flat_map(|r| {
            r.iter()
                .zip(mean)
                .zip(sd)
                .map(|((v, m), s)| if *s > 0.0 { (v - m) / s } else { 0.0 })
        })
        .collect()
}
