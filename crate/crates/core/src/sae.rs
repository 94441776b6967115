// SPDX-License-Identifier: MIT OR Apache-2.0

//! TopK sparse autoencoder.
//!
//! ```text
//! pre  = W_enc (x - b_pre) + b_enc          (n)
//! h    = TopK(ReLU(pre), k)                  (n, k non-zero slots)
//! x̂    = W_dec h + b_pre                     (d)
//! loss = ‖x - x̂‖² + α ‖(x - x̂) - ê‖²
//! ```
//!
//! where `ê` reconstructs the residual from the `k_aux` dead features with the
//! largest raw pre-activations. The decoder is stored feature-major: row `i`
//! of [`Sae::w_dec`] is decoder column `i`.
//!
//! Everything is generic over [`Real`] so the same code runs in f32 for
//! training and in f64 for gradient checks.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Floating point scalar used by the autoencoder.
pub trait Real:
    num_traits::Float
    + AddAssign
    + SubAssign
    + MulAssign
    + Default
    + Debug
    + Send
    + Sync
    + std::iter::Sum
    + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dot product with eight independent accumulators, summed in a fixed order.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[inline]
pub(crate) fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Sparse latent code: exactly `k` entries with strictly increasing indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode<T = f32> {
    dict_size: usize,
    indices: Vec<u32>,
    values: Vec<T>,
}

impl<T: Real> SparseCode<T> {
    /// Validating constructor. Entries may come in any order; they are sorted by index.
    pub fn new(dict_size: usize, mut entries: Vec<(u32, T)>) -> Result<Self> {
        entries.sort_by_key(|e| e.0);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Config(format!("duplicate feature index {}", w[0].0)));
            }
        }
        if let Some(&(i, _)) = entries.iter().find(|e| e.0 as usize >= dict_size) {
            return Err(Error::Config(format!(
                "feature index {i} out of range for dictionary of {dict_size}"
            )));
        }
        if let Some(&(i, v)) = entries.iter().find(|e| !(e.1 >= T::zero())) {
            return Err(Error::Config(format!("feature {i} has negative or NaN value {v:?}")));
        }
        let (indices, values) = entries.into_iter().unzip();
        Ok(Self {
            dict_size,
            indices,
            values,
        })
    }

    pub fn dict_size(&self) -> usize {
        self.dict_size
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, T)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    /// Activation of `feature`, zero when not among the entries.
    pub fn get(&self, feature: u32) -> T {
        match self.indices.binary_search(&feature) {
            Ok(pos) => self.values[pos],
            Err(_) => T::zero(),
        }
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.dict_size];
        for (i, v) in self.iter() {
            out[i as usize] = v;
        }
        out
    }
}

/// Zeroes the activation of `feature`, keeping the entry so the set of
/// selected features is unchanged. Absent features leave the code as is.
pub fn ablate_feature<T: Real>(code: &SparseCode<T>, feature: u32) -> SparseCode<T> {
    let mut out = code.clone();
    if let Ok(pos) = out.indices.binary_search(&feature) {
        out.values[pos] = T::zero();
    }
    out
}

/// Selects the `k` largest values of `ReLU(pre)`, ties to the lower index.
pub fn top_k_relu<T: Real>(pre: &[T], k: usize) -> Result<SparseCode<T>> {
    let n = pre.len();
    if k > n {
        return Err(Error::Config(format!("k={k} exceeds dictionary size {n}")));
    }
    let relu = |v: T| if v > T::zero() { v } else { T::zero() };
    let mut order: Vec<u32> = (0..n as u32).collect();
    let cmp = |a: &u32, b: &u32| {
        let (va, vb) = (relu(pre[*a as usize]), relu(pre[*b as usize]));
        vb.partial_cmp(&va)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    };
    if k < n && k > 0 {
        order.select_nth_unstable_by(k - 1, cmp);
    }
    order.truncate(k);
    order.sort_unstable();
    let values = order.iter().map(|&i| relu(pre[i as usize])).collect();
    Ok(SparseCode {
        dict_size: n,
        indices: order,
        values,
    })
}

/// Indices of the `k` largest raw values among features with `mask[i] == true`,
/// ties to the lower index, returned in increasing index order.
fn top_k_masked<T: Real>(pre: &[T], mask: &[bool], k: usize) -> Vec<u32> {
    let mut cand: Vec<u32> = (0..pre.len() as u32).filter(|&i| mask[i as usize]).collect();
    let k = k.min(cand.len());
    let cmp = |a: &u32, b: &u32| {
        pre[*b as usize]
            .partial_cmp(&pre[*a as usize])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    };
    if k > 0 && k < cand.len() {
        cand.select_nth_unstable_by(k - 1, cmp);
    }
    cand.truncate(k);
    cand.sort_unstable();
    cand
}

/// Batch losses: `total = recon + auxk_alpha · aux`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SaeLosses {
    pub recon: f64,
    pub aux: f64,
    pub total: f64,
}

/// Sparsity settings for a loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    pub k: usize,
    /// Upper bound on auxiliary features; the effective count is also capped
    /// at the number of dead features.
    pub k_aux: usize,
    pub auxk_alpha: f64,
}

/// Parameter-shaped gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeGrads<T> {
    pub w_enc: Vec<T>,
    pub b_enc: Vec<T>,
    pub w_dec: Vec<T>,
    pub b_pre: Vec<T>,
}

/// Per-row forward results kept for the backward pass.
struct RowForward<T> {
    code: SparseCode<T>,
    /// Raw pre-activations of the selected features, aligned with `code`.
    selected_pre: Vec<T>,
    aux_indices: Vec<u32>,
    aux_values: Vec<T>,
    recon: Vec<T>,
}

/// Outcome of [`Sae::loss_and_grad`].
pub struct BatchResult<T> {
    pub losses: SaeLosses,
    pub grads: SaeGrads<T>,
    /// Features that fired with a strictly positive activation on at least one row.
    pub fired: Vec<bool>,
    /// Effective number of auxiliary features used.
    pub k_aux_used: usize,
}

/// TopK SAE parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Sae<T = f32> {
    d_model: usize,
    dict_size: usize,
    /// Encoder, `dict_size × d_model`, row-major.
    pub w_enc: Vec<T>,
    pub b_enc: Vec<T>,
    /// Decoder, feature-major: `dict_size × d_model`, row `i` is decoder column `i`.
    pub w_dec: Vec<T>,
    pub b_pre: Vec<T>,
}

impl<T: Real> Sae<T> {
    pub fn zeros(d_model: usize, dict_size: usize) -> Self {
        Self {
            d_model,
            dict_size,
            w_enc: vec![T::zero(); dict_size * d_model],
            b_enc: vec![T::zero(); dict_size],
            w_dec: vec![T::zero(); dict_size * d_model],
            b_pre: vec![T::zero(); d_model],
        }
    }

    pub fn from_parts(
        d_model: usize,
        dict_size: usize,
        w_enc: Vec<T>,
        b_enc: Vec<T>,
        w_dec: Vec<T>,
        b_pre: Vec<T>,
    ) -> Result<Self> {
        let nd = dict_size * d_model;
        if w_enc.len() != nd || w_dec.len() != nd || b_enc.len() != dict_size || b_pre.len() != d_model
        {
            return Err(Error::Shape(format!(
                "parameter sizes do not match d_model={d_model}, dict_size={dict_size}"
            )));
        }
        Ok(Self {
            d_model,
            dict_size,
            w_enc,
            b_enc,
            w_dec,
            b_pre,
        })
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn dict_size(&self) -> usize {
        self.dict_size
    }

    /// Decoder column `i` (the feature's direction in embedding space).
    pub fn decoder_column(&self, i: usize) -> &[T] {
        &self.w_dec[i * self.d_model..(i + 1) * self.d_model]
    }

    pub fn encoder_row(&self, i: usize) -> &[T] {
        &self.w_enc[i * self.d_model..(i + 1) * self.d_model]
    }

    /// Named parameter tensors in a fixed order.
    pub fn tensors(&self) -> [(&'static str, &[T]); 4] {
        [
            ("w_enc", &self.w_enc),
            ("b_enc", &self.b_enc),
            ("w_dec", &self.w_dec),
            ("b_pre", &self.b_pre),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Vec<T>); 4] {
        [
            ("w_enc", &mut self.w_enc),
            ("b_enc", &mut self.b_enc),
            ("w_dec", &mut self.w_dec),
            ("b_pre", &mut self.b_pre),
        ]
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.d_model {
            return Err(Error::Shape(format!(
                "input has {} values, d_model is {}",
                x.len(),
                self.d_model
            )));
        }
        Ok(())
    }

    /// `W_enc (x - b_pre) + b_enc` into `out`.
    pub fn pre_activations_into(&self, x: &[T], centered: &mut [T], out: &mut [T]) {
        for ((c, &xi), &b) in centered.iter_mut().zip(x).zip(&self.b_pre) {
            *c = xi - b;
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.encoder_row(i), centered) + self.b_enc[i];
        }
    }

    pub fn pre_activations(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        let mut centered = vec![T::zero(); self.d_model];
        let mut out = vec![T::zero(); self.dict_size];
        self.pre_activations_into(x, &mut centered, &mut out);
        Ok(out)
    }

    pub fn encode(&self, x: &[T], k: usize) -> Result<SparseCode<T>> {
        if k > self.dict_size {
            return Err(Error::Config(format!(
                "k={k} exceeds dictionary size {}",
                self.dict_size
            )));
        }
        top_k_relu(&self.pre_activations(x)?, k)
    }

    /// Encodes every row of a row-major batch, in parallel, preserving order.
    pub fn encode_batch(&self, batch: &[T], k: usize) -> Result<Vec<SparseCode<T>>> {
        if k > self.dict_size {
            return Err(Error::Config(format!(
                "k={k} exceeds dictionary size {}",
                self.dict_size
            )));
        }
        if !batch.len().is_multiple_of(self.d_model) {
            return Err(Error::Shape("batch is not a whole number of rows".into()));
        }
        batch
            .par_chunks(self.d_model)
            .with_min_len(16)
            .map_init(
                || (vec![T::zero(); self.d_model], vec![T::zero(); self.dict_size]),
                |(centered, pre), x| {
                    self.pre_activations_into(x, centered, pre);
                    top_k_relu(pre, k)
                },
            )
            .collect()
    }

    pub fn decode(&self, code: &SparseCode<T>) -> Result<Vec<T>> {
        if code.dict_size != self.dict_size {
            return Err(Error::Shape(format!(
                "code is for dictionary of {}, model has {}",
                code.dict_size, self.dict_size
            )));
        }
        let mut out = self.b_pre.clone();
        for (i, v) in code.iter() {
            axpy(v, self.decoder_column(i as usize), &mut out);
        }
        Ok(out)
    }

    /// Dense decode `W_dec h + b_pre` for an arbitrary (not necessarily sparse) `h`.
    pub fn decode_dense(&self, h: &[T]) -> Result<Vec<T>> {
        if h.len() != self.dict_size {
            return Err(Error::Shape("dense code length differs from dictionary size".into()));
        }
        let mut out = self.b_pre.clone();
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (i, &hi) in h.iter().enumerate() {
                acc += self.w_dec[i * self.d_model + j] * hi;
            }
            *o += acc;
        }
        Ok(out)
    }

    fn check_loss_args(&self, batch: &[T], cfg: &LossConfig, dead_mask: &[bool]) -> Result<usize> {
        if cfg.k > self.dict_size {
            return Err(Error::Config(format!(
                "k={} exceeds dictionary size {}",
                cfg.k, self.dict_size
            )));
        }
        if cfg.k_aux > self.dict_size {
            return Err(Error::Config(format!(
                "k_aux={} exceeds dictionary size {}",
                cfg.k_aux, self.dict_size
            )));
        }
        if dead_mask.len() != self.dict_size {
            return Err(Error::Shape("dead mask length differs from dictionary size".into()));
        }
        if batch.is_empty() || !batch.len().is_multiple_of(self.d_model) {
            return Err(Error::Shape("batch must hold at least one whole row".into()));
        }
        Ok(batch.len() / self.d_model)
    }

    fn forward_rows(&self, batch: &[T], cfg: &LossConfig, dead_mask: &[bool]) -> Result<(Vec<RowForward<T>>, usize)> {
        let dead_count = dead_mask.iter().filter(|&&d| d).count();
        let k_aux = if cfg.auxk_alpha > 0.0 { cfg.k_aux.min(dead_count) } else { 0 };
        let rows = batch
            .par_chunks(self.d_model)
            .with_min_len(16)
            .map_init(
                || (vec![T::zero(); self.d_model], vec![T::zero(); self.dict_size]),
                |(centered, pre), x| -> Result<RowForward<T>> {
                    self.pre_activations_into(x, centered, pre);
                    let code = top_k_relu(pre, cfg.k)?;
                    let selected_pre = code.indices.iter().map(|&i| pre[i as usize]).collect();
                    let recon = self.decode(&code)?;
                    let aux_indices = if k_aux > 0 {
                        top_k_masked(pre, dead_mask, k_aux)
                    } else {
                        Vec::new()
                    };
                    let aux_values = aux_indices.iter().map(|&i| pre[i as usize]).collect();
                    Ok(RowForward {
                        code,
                        selected_pre,
                        aux_indices,
                        aux_values,
                        recon,
                    })
                },
            )
            .collect::<Result<Vec<_>>>()?;
        Ok((rows, k_aux))
    }

    /// Residual-of-residual `q = ê - (x - x̂)` for one row.
    fn aux_residual(&self, x: &[T], row: &RowForward<T>) -> Vec<T> {
        let mut q: Vec<T> = row.recon.iter().zip(x).map(|(&r, &xi)| r - xi).collect();
        for (&a, &v) in row.aux_indices.iter().zip(&row.aux_values) {
            axpy(v, self.decoder_column(a as usize), &mut q);
        }
        q
    }

    /// Mean losses over a batch; rows are summed sequentially in batch order.
    pub fn forward_loss(&self, batch: &[T], cfg: &LossConfig, dead_mask: &[bool]) -> Result<SaeLosses> {
        let count = self.check_loss_args(batch, cfg, dead_mask)?;
        let (rows, k_aux) = self.forward_rows(batch, cfg, dead_mask)?;
        let (mut recon, mut aux) = (0.0f64, 0.0f64);
        for (x, row) in batch.chunks_exact(self.d_model).zip(&rows) {
            recon += sq_err(x, &row.recon);
            if k_aux > 0 {
                aux += self.aux_residual(x, row).iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
            }
        }
        Ok(losses(recon / count as f64, aux / count as f64, cfg.auxk_alpha))
    }

    /// Losses plus the exact gradient of `forward_loss` with respect to all
    /// parameters (the residual fed to the auxiliary term is not detached).
    pub fn loss_and_grad(&self, batch: &[T], cfg: &LossConfig, dead_mask: &[bool]) -> Result<BatchResult<T>> {
        let count = self.check_loss_args(batch, cfg, dead_mask)?;
        let (rows, k_aux) = self.forward_rows(batch, cfg, dead_mask)?;
        let d = self.d_model;
        let mut g = SaeGrads {
            w_enc: vec![T::zero(); self.w_enc.len()],
            b_enc: vec![T::zero(); self.dict_size],
            w_dec: vec![T::zero(); self.w_dec.len()],
            b_pre: vec![T::zero(); d],
        };
        let mut fired = vec![false; self.dict_size];
        let alpha = T::of(cfg.auxk_alpha);
        let two = T::of(2.0);
        let (mut recon, mut aux) = (0.0f64, 0.0f64);
        let mut centered = vec![T::zero(); d];
        let mut g_xhat = vec![T::zero(); d];
        let mut g_aux = vec![T::zero(); d];

        for (x, row) in batch.chunks_exact(d).zip(&rows) {
            for ((c, &xi), &b) in centered.iter_mut().zip(x).zip(&self.b_pre) {
                *c = xi - b;
            }
            recon += sq_err(x, &row.recon);
            // dL/dx̂ = 2 r + 2α q, with r = x̂ - x.
            for ((gx, &r), &xi) in g_xhat.iter_mut().zip(&row.recon).zip(x) {
                *gx = two * (r - xi);
            }
            if k_aux > 0 {
                let q = self.aux_residual(x, row);
                aux += q.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
                for ((ga, gx), &qi) in g_aux.iter_mut().zip(g_xhat.iter_mut()).zip(&q) {
                    *ga = two * alpha * qi;
                    *gx += *ga;
                }
            }
            for (j, gx) in g_xhat.iter().enumerate() {
                g.b_pre[j] += *gx;
            }
            for ((&i, &h), &u) in row.code.indices.iter().zip(&row.code.values).zip(&row.selected_pre) {
                let i = i as usize;
                if h > T::zero() {
                    fired[i] = true;
                }
                axpy(h, &g_xhat, &mut g.w_dec[i * d..(i + 1) * d]);
                if u > T::zero() {
                    let g_u = dot(self.decoder_column(i), &g_xhat);
                    self.backprop_pre(i, g_u, &centered, &mut g);
                }
            }
            for (&a, &u) in row.aux_indices.iter().zip(&row.aux_values) {
                let a = a as usize;
                axpy(u, &g_aux, &mut g.w_dec[a * d..(a + 1) * d]);
                let g_u = dot(self.decoder_column(a), &g_aux);
                self.backprop_pre(a, g_u, &centered, &mut g);
            }
        }

        let inv = T::one() / T::of(count as f64);
        for (_, buf) in g.iter_mut() {
            for v in buf.iter_mut() {
                *v *= inv;
            }
        }
        Ok(BatchResult {
            losses: losses(recon / count as f64, aux / count as f64, cfg.auxk_alpha),
            grads: g,
            fired,
            k_aux_used: k_aux,
        })
    }

    /// Accumulates the gradient flowing into pre-activation `i`.
    fn backprop_pre(&self, i: usize, g_u: T, centered: &[T], g: &mut SaeGrads<T>) {
        let d = self.d_model;
        g.b_enc[i] += g_u;
        axpy(g_u, centered, &mut g.w_enc[i * d..(i + 1) * d]);
        axpy(-g_u, self.encoder_row(i), &mut g.b_pre);
    }
}

impl<T: Real> SaeGrads<T> {
    pub fn iter(&self) -> [(&'static str, &[T]); 4] {
        [
            ("w_enc", &self.w_enc),
            ("b_enc", &self.b_enc),
            ("w_dec", &self.w_dec),
            ("b_pre", &self.b_pre),
        ]
    }

    pub fn iter_mut(&mut self) -> [(&'static str, &mut Vec<T>); 4] {
        [
            ("w_enc", &mut self.w_enc),
            ("b_enc", &mut self.b_enc),
            ("w_dec", &mut self.w_dec),
            ("b_pre", &mut self.b_pre),
        ]
    }
}

fn sq_err<T: Real>(x: &[T], y: &[T]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&a, &b)| {
            let e = a.as_f64() - b.as_f64();
            e * e
        })
        .sum()
}

fn losses(recon: f64, aux: f64, alpha: f64) -> SaeLosses {
    SaeLosses {
        recon,
        aux,
        total: recon + alpha * aux,
    }
}
