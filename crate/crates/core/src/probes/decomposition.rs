// SPDX-License-Identifier: MIT OR Apache-2.0

//! PCA and NMF baselines.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Row-major `n_components × d`, unit rows.
    pub components: Vec<f64>,
    pub singular_values: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    /// Row-major `count × n_components`.
    pub scores: Vec<f64>,
    pub n_components: usize,
}

/// PCA by SVD of the column-centred data. Each component is sign-flipped so
/// its largest-magnitude loading is positive.
pub fn pca_fit(x: &[f64], count: usize, d: usize, n_components: usize) -> Result<Pca> {
    if x.len() != count * d {
        return Err(Error::Shape("pca input has the wrong length".into()));
    }
    if count <= n_components || n_components == 0 || n_components > d {
        return Err(Error::Shape(format!(
            "pca needs 0 < n_components ≤ d and count > n_components (count {count}, d {d}, components {n_components})"
        )));
    }
    let mut mean = vec![0.0; d];
    for r in x.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let centered = DMatrix::from_fn(count, d, |i, j| x[i * d + j] - mean[j]);
    let svd = centered.clone().svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let total: f64 = svd.singular_values.iter().map(|s| s * s).sum();
    let mut components = Vec::with_capacity(n_components * d);
    for c in 0..n_components {
        let row: Vec<f64> = v_t.row(c).iter().copied().collect();
        let pivot = row.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        components.extend(row.iter().map(|v| v * sign));
    }
    let comp = DMatrix::from_row_slice(n_components, d, &components);
    let scores_m = &centered * comp.transpose();
    let mut scores = Vec::with_capacity(count * n_components);
    for i in 0..count {
        scores.extend(scores_m.row(i).iter());
    }
    let singular_values: Vec<f64> = svd.singular_values.iter().take(n_components).copied().collect();
    let explained_variance_ratio = singular_values
        .iter()
        .map(|s| if total > 0.0 { s * s / total } else { 0.0 })
        .collect();
    Ok(Pca {
        mean,
        components,
        singular_values,
        explained_variance_ratio,
        scores,
        n_components,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmfConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Nmf {
    /// Subtracted from every cell before factorizing.
    pub shift: f64,
    /// Row-major `count × r` loadings.
    pub w: Vec<f64>,
    /// Row-major `r × d` factors.
    pub h: Vec<f64>,
    pub r: usize,
    /// Frobenius reconstruction error after each iteration.
    pub errors: Vec<f64>,
    pub converged: bool,
}

const NMF_EPS: f64 = 1e-12;

/// Lee-Seung multiplicative updates for `x − min(x) ≈ W H`. Stops after
/// `max_iter` iterations or when the relative error change drops below `tol`;
/// the partial result is returned either way with `converged` set accordingly.
pub fn nmf_fit(x: &[f64], count: usize, d: usize, r: usize, cfg: &NmfConfig) -> Result<Nmf> {
    if x.len() != count * d || count == 0 || d == 0 {
        return Err(Error::Shape("nmf input has the wrong length".into()));
    }
    if r == 0 || count <= r {
        return Err(Error::Shape("nmf needs 0 < r < count".into()));
    }
    let shift = x.iter().copied().fold(f64::INFINITY, f64::min);
    let v = DMatrix::from_fn(count, d, |i, j| x[i * d + j] - shift);
    let mean = v.mean();
    let scale = (mean.max(NMF_EPS) / r as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = DMatrix::from_fn(count, r, |_, _| rng.random::<f64>() * scale);
    let mut h = DMatrix::from_fn(r, d, |_, _| rng.random::<f64>() * scale);
    let mut errors = vec![];
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        let num = w.transpose() * &v;
        let den = w.transpose() * &w * &h;
        h.zip_zip_apply(&num, &den, |hv, n, dd| *hv *= n / (dd + NMF_EPS));
        let num = &v * h.transpose();
        let den = &w * (&h * h.transpose());
        w.zip_zip_apply(&num, &den, |wv, n, dd| *wv *= n / (dd + NMF_EPS));
        let err = (&v - &w * &h).norm();
        if let Some(&prev) = errors.last() {
            let prev: f64 = prev;
            errors.push(err);
            if prev == 0.0 || (prev - err).abs() / prev < cfg.tol {
                converged = true;
                break;
            }
        } else {
            errors.push(err);
        }
    }
    let row_major = |m: &DMatrix<f64>| -> Vec<f64> { (0..m.nrows()).flat_map(|i| m.row(i).iter().copied().collect::<Vec<_>>()).collect() };
    Ok(Nmf {
        shift,
        w: row_major(&w),
        h: row_major(&h),
        r,
        errors,
        converged,
    })
}
