// SPDX-License-Identifier: MIT OR Apache-2.0

//! SAE training: input normalization, Adam with warmup/decay schedule,
//! dead-feature tracking for the auxiliary loss, and hyperparameter sweeps.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fidelity::{self, ReadoutProxy};
use crate::io::{EmbeddingShard, SaeCheckpoint, SaeConfig};
use crate::sae::{dot, LossConfig, Sae, SaeGrads};

fn default_lr() -> f64 {
    1e-4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_epochs() -> usize {
    80
}
fn default_batch_size() -> usize {
    256
}
fn default_warmup() -> f64 {
    0.05
}
fn default_decay_start() -> f64 {
    0.8
}
fn default_expansion() -> usize {
    8
}
fn default_k() -> usize {
    80
}
fn default_auxk_alpha() -> f64 {
    0.03125
}
fn default_dead_window() -> u64 {
    1_000_000
}
fn default_norm_rows() -> usize {
    100_000
}
fn default_log_every() -> u64 {
    10
}

/// Training hyperparameters. Defaults follow the reference TopK setup
/// (lr 1e-4, 80 epochs, batch 256, 5% warmup, decay from 80%, α = 1/32).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    #[serde(default = "default_decay_start")]
    pub decay_start_fraction: f64,
    #[serde(default = "default_expansion")]
    pub expansion_factor: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_auxk_alpha")]
    pub auxk_alpha: f64,
    /// Auxiliary feature budget; `None` means `2·k`.
    #[serde(default)]
    pub k_aux: Option<usize>,
    /// A feature is dead once it has not fired for this many training examples.
    #[serde(default = "default_dead_window")]
    pub dead_window: u64,
    /// Rows (from the start of the data) used to compute the normalizer.
    #[serde(default = "default_norm_rows")]
    pub normalization_rows: usize,
    /// Optional cap on the total number of optimizer steps.
    #[serde(default)]
    pub max_steps: Option<u64>,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            warmup_fraction: default_warmup(),
            decay_start_fraction: default_decay_start(),
            expansion_factor: default_expansion(),
            k: default_k(),
            auxk_alpha: default_auxk_alpha(),
            k_aux: None,
            dead_window: default_dead_window(),
            normalization_rows: default_norm_rows(),
            max_steps: None,
            log_every: default_log_every(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if !(0.0 < self.warmup_fraction
            && self.warmup_fraction < self.decay_start_fraction
            && self.decay_start_fraction < 1.0)
        {
            return bad("require 0 < warmup_fraction < decay_start_fraction < 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if self.expansion_factor == 0 || self.k == 0 {
            return bad("expansion_factor and k must be positive");
        }
        if !(self.auxk_alpha >= 0.0 && self.auxk_alpha.is_finite()) {
            return bad("auxk_alpha must be finite and non-negative");
        }
        if self.normalization_rows == 0 || self.log_every == 0 {
            return bad("normalization_rows and log_every must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn k_aux(&self) -> usize {
        self.k_aux.unwrap_or(2 * self.k)
    }
}

/// `s = sqrt(mean_i ‖x_i‖²)`, so that `x / s` has unit mean squared norm.
pub fn compute_normalizer(sample: &[f32], d_model: usize) -> Result<f32> {
    if d_model == 0 || sample.is_empty() || !sample.len().is_multiple_of(d_model) {
        return Err(Error::EmptyData("normalization sample needs at least one row".into()));
    }
    let rows = sample.len() / d_model;
    let total: f64 = sample
        .chunks_exact(d_model)
        .map(|r| r.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>())
        .sum();
    let s = (total / rows as f64).sqrt();
    if s == 0.0 {
        return Err(Error::DegenerateScale);
    }
    Ok(s as f32)
}

/// Learning rate at `step`: linear warmup from 0, constant, then linear decay
/// to 0 at `total_steps`.
pub fn lr_schedule(step: u64, total_steps: u64, cfg: &TrainConfig) -> f64 {
    let (step, total) = (step as f64, total_steps as f64);
    let warmup = cfg.warmup_fraction * total;
    let decay_start = cfg.decay_start_fraction * total;
    if step < warmup {
        cfg.lr * step / warmup
    } else if step < decay_start {
        cfg.lr
    } else if total > decay_start {
        cfg.lr * ((total - step) / (total - decay_start)).max(0.0)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moments per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update over named tensors.
pub fn adam_step(
    params: &mut [(&'static str, &mut [f32])],
    grads: &[&[f32]],
    state: &mut OptimizerState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape("parameter, gradient and state counts differ".into()));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.len() != g.len() {
            return Err(Error::Shape(format!("gradient for {name} has wrong length")));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { param: name });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let step_size = (lr / bc1) as f32;
    let bc2_sqrt = bc2.sqrt() as f32;
    let (b1, b2, eps) = (cfg.beta1 as f32, cfg.beta2 as f32, cfg.eps as f32);
    for (i, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            let gj = g[j];
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            p[j] -= step_size * m[j] / (v[j].sqrt() / bc2_sqrt + eps);
        }
    }
    Ok(())
}

/// Gaussian decoder columns of unit norm, encoder tied to the decoder
/// transpose, `b_pre` at the sample mean, zero encoder bias.
pub fn initialize(d_model: usize, dict_size: usize, sample: &[f32], seed: u64) -> Sae<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sae = Sae::zeros(d_model, dict_size);
    for col in sae.w_dec.chunks_exact_mut(d_model) {
        for v in col.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        normalize_in_place(col);
    }
    sae.w_enc = sae.w_dec.clone();
    let rows = (sample.len() / d_model).max(1);
    let mut mean = vec![0.0f64; d_model];
    for r in sample.chunks_exact(d_model) {
        for (m, &v) in mean.iter_mut().zip(r) {
            *m += v as f64;
        }
    }
    sae.b_pre = mean.iter().map(|m| (m / rows as f64) as f32).collect();
    sae
}

fn normalize_in_place(v: &mut [f32]) {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

/// Removes from each decoder-column gradient its component along the column.
fn project_decoder_grads(sae: &Sae<f32>, grads: &mut SaeGrads<f32>) {
    let d = sae.d_model();
    for (i, g) in grads.w_dec.chunks_exact_mut(d).enumerate() {
        let col = sae.decoder_column(i);
        let along = dot(g, col);
        for (gj, &cj) in g.iter_mut().zip(col) {
            *gj -= along * cj;
        }
    }
}

/// Row order for `epoch`, a pure function of `(seed, epoch)`.
pub fn epoch_permutation(count: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch + 1);
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut rng);
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: u64,
    pub lr: f64,
    pub recon: f64,
    pub aux: f64,
    pub dead_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub d_model: usize,
    pub dict_size: usize,
    pub rows: usize,
    pub total_steps: u64,
    pub norm_scaler: f32,
    pub loss_curve: Vec<LossPoint>,
    pub initial_recon: f64,
    pub final_recon: f64,
    /// Dead count at the first logged step after one full dead window, if reached.
    pub first_window_dead_count: Option<usize>,
    pub final_dead_count: usize,
    pub final_fraction_alive: f64,
}

impl TrainReport {
    /// Loss curve as CSV: `step,lr,recon,aux,dead_count`.
    pub fn loss_curve_csv(&self) -> String {
        let mut out = String::from("step,lr,recon,aux,dead_count\n");
        for p in &self.loss_curve {
            writeln!(out, "{},{:e},{:e},{:e},{}", p.step, p.lr, p.recon, p.aux, p.dead_count).unwrap();
        }
        out
    }
}

/// Trains a TopK SAE on `data` (raw, unnormalized rows).
pub fn fit(data: &EmbeddingShard, cfg: &TrainConfig) -> Result<(SaeCheckpoint, TrainReport)> {
    cfg.validate()?;
    let d = data.d_model();
    let count = data.count();
    if count == 0 {
        return Err(Error::EmptyData("training data has no rows".into()));
    }
    let n = cfg.expansion_factor * d;
    let sae_cfg = SaeConfig {
        d_model: d,
        dict_size: n,
        k: cfg.k,
        auxk_alpha: cfg.auxk_alpha,
        seed: cfg.seed,
    };
    sae_cfg.validate()?;
    let k_aux = cfg.k_aux().min(n);

    let norm_rows = cfg.normalization_rows.min(count);
    let scaler = compute_normalizer(&data.data()[..norm_rows * d], d)?;
    let x: Vec<f32> = data.data().iter().map(|v| v / scaler).collect();
    let mut sae = initialize(d, n, &x[..norm_rows * d], cfg.seed);

    let steps_per_epoch = count.div_ceil(cfg.batch_size) as u64;
    let mut total_steps = cfg.epochs as u64 * steps_per_epoch;
    if let Some(cap) = cfg.max_steps {
        total_steps = total_steps.min(cap);
    }
    let sizes: Vec<usize> = sae.tensors().iter().map(|t| t.1.len()).collect();
    let mut opt = OptimizerState::new(&sizes);
    let adam = cfg.adam();
    let loss_cfg = LossConfig {
        k: cfg.k,
        k_aux,
        auxk_alpha: cfg.auxk_alpha,
    };

    let mut since_fired = vec![0u64; n];
    let mut curve = Vec::new();
    let mut first_window_dead = None;
    let mut seen: u64 = 0;
    let mut batch = Vec::with_capacity(cfg.batch_size * d);
    let mut step = 0u64;

    'outer: for epoch in 0..cfg.epochs as u64 {
        let order = epoch_permutation(count, cfg.seed, epoch);
        for rows in order.chunks(cfg.batch_size) {
            if step >= total_steps {
                break 'outer;
            }
            batch.clear();
            for &r in rows {
                batch.extend_from_slice(&x[r * d..(r + 1) * d]);
            }
            let dead: Vec<bool> = since_fired.iter().map(|&s| s >= cfg.dead_window).collect();
            let dead_count = dead.iter().filter(|&&b| b).count();
            let lr = lr_schedule(step, total_steps, cfg);
            let mut res = sae.loss_and_grad(&batch, &loss_cfg, &dead)?;
            project_decoder_grads(&sae, &mut res.grads);
            {
                let grads = res.grads.iter().map(|(_, g)| g).to_vec();
                let mut params: Vec<(&'static str, &mut [f32])> = sae
                    .tensors_mut()
                    .into_iter()
                    .map(|(name, t)| (name, t.as_mut_slice()))
                    .collect();
                adam_step(&mut params, &grads, &mut opt, lr, &adam)?;
            }
            for col in sae.w_dec.chunks_exact_mut(d) {
                normalize_in_place(col);
            }
            for (s, &f) in since_fired.iter_mut().zip(&res.fired) {
                *s = if f { 0 } else { *s + rows.len() as u64 };
            }
            seen += rows.len() as u64;

            let last = step + 1 == total_steps;
            if step.is_multiple_of(cfg.log_every) || last {
                if first_window_dead.is_none() && seen >= cfg.dead_window {
                    first_window_dead = Some(dead_count);
                }
                curve.push(LossPoint {
                    step,
                    lr,
                    recon: res.losses.recon,
                    aux: res.losses.aux,
                    dead_count,
                });
            }
            step += 1;
        }
    }

    let final_dead = since_fired.iter().filter(|&&s| s >= cfg.dead_window).count();
    let report = TrainReport {
        config: cfg.clone(),
        d_model: d,
        dict_size: n,
        rows: count,
        total_steps,
        norm_scaler: scaler,
        initial_recon: curve.first().map(|p| p.recon).unwrap_or(f64::NAN),
        final_recon: curve.last().map(|p| p.recon).unwrap_or(f64::NAN),
        loss_curve: curve,
        first_window_dead_count: first_window_dead,
        final_dead_count: final_dead,
        final_fraction_alive: 1.0 - final_dead as f64 / n as f64,
    };
    let ckpt = SaeCheckpoint::new(sae_cfg, sae, scaler, step)?;
    Ok((ckpt, report))
}

/// One grid cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub expansion_factor: usize,
    pub k: usize,
    pub fve: Option<f64>,
    pub delta_loss: Option<f64>,
    pub l2: Option<f64>,
    pub fraction_alive: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Indices into `rows` of the configurations not dominated in (k, FVE).
    pub frontier: Vec<usize>,
}

impl SweepReport {
    /// CSV with columns `expansion,k,fve,delta_loss,l2,fraction_alive,pareto`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("expansion,k,fve,delta_loss,l2,fraction_alive,pareto\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for (i, r) in self.rows.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.expansion_factor,
                r.k,
                opt(r.fve),
                opt(r.delta_loss),
                opt(r.l2),
                opt(r.fraction_alive),
                self.frontier.contains(&i) as u8
            )
            .unwrap();
        }
        out
    }
}

/// Indices of rows not dominated in (lower k, higher FVE). Failed rows never qualify.
pub fn pareto_frontier(rows: &[SweepRow]) -> Vec<usize> {
    let ok: Vec<(usize, usize, f64)> = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.fve.map(|f| (i, r.k, f)))
        .collect();
    ok.iter()
        .filter(|&&(i, k, f)| {
            !ok.iter().any(|&(j, k2, f2)| j != i && k2 <= k && f2 >= f && (k2 < k || f2 > f))
        })
        .map(|&(i, _, _)| i)
        .collect()
}

/// Trains every grid configuration and evaluates it on `eval`. A failing cell
/// is recorded with its error and the sweep continues.
pub fn sweep(
    train: &EmbeddingShard,
    grid: &[TrainConfig],
    eval: &EmbeddingShard,
    proxy: &ReadoutProxy,
) -> Result<(SweepReport, Vec<Option<SaeCheckpoint>>)> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    let mut ckpts = Vec::with_capacity(grid.len());
    for cfg in grid {
        let outcome = fit(train, cfg).and_then(|(ck, _)| {
            let m = fidelity::evaluate_checkpoint(&ck, eval, proxy)?;
            Ok((ck, m))
        });
        match outcome {
            Ok((ck, m)) => {
                rows.push(SweepRow {
                    expansion_factor: cfg.expansion_factor,
                    k: cfg.k,
                    fve: Some(m.fve),
                    delta_loss: Some(m.delta_loss),
                    l2: Some(m.l2),
                    fraction_alive: Some(m.fraction_alive),
                    error: None,
                });
                ckpts.push(Some(ck));
            }
            Err(e) => {
                log::warn!("sweep cell expansion={} k={} failed: {e}", cfg.expansion_factor, cfg.k);
                rows.push(SweepRow {
                    expansion_factor: cfg.expansion_factor,
                    k: cfg.k,
                    fve: None,
                    delta_loss: None,
                    l2: None,
                    fraction_alive: None,
                    error: Some(e.to_string()),
                });
                ckpts.push(None);
            }
        }
    }
    let frontier = pareto_frontier(&rows);
    Ok((SweepReport { rows, frontier }, ckpts))
}

/// Cartesian product of expansion factors and k values over a base config.
pub fn grid(base: &TrainConfig, expansions: &[usize], ks: &[usize]) -> Vec<TrainConfig> {
    let mut out = Vec::with_capacity(expansions.len() * ks.len());
    for &e in expansions {
        for &k in ks {
            out.push(TrainConfig {
                expansion_factor: e,
                k,
                ..base.clone()
            });
        }
    }
    out
}
