// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic embeddings drawn from known sparse dictionaries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::io::EmbeddingShard;

#[derive(Debug, Clone)]
pub struct Planted {
    /// Row-major `atoms × d`, unit rows.
    pub atoms: Vec<f32>,
    pub n_atoms: usize,
    pub data: EmbeddingShard,
}

fn unit_atoms(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<f32> {
    let mut atoms = Vec::with_capacity(n * d);
    for _ in 0..n {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        atoms.extend(v.iter().map(|x| (x / norm) as f32));
    }
    atoms
}

fn compose(atoms: &[f32], d: usize, active: &[(usize, f32)], noise: f32, rng: &mut ChaCha8Rng, out: &mut Vec<f32>) {
    let mut x = vec![0.0f32; d];
    for &(a, c) in active {
        for (xi, wi) in x.iter_mut().zip(&atoms[a * d..(a + 1) * d]) {
            *xi += c * wi;
        }
    }
    if noise > 0.0 {
        for xi in &mut x {
            let z: f32 = StandardNormal.sample(rng);
            *xi += noise * z;
        }
    }
    out.extend(x);
}

/// Each sample is a sum of exactly `k` distinct random unit atoms with
/// coefficients uniform in `[0.5, 1.5]`, plus isotropic Gaussian noise.
pub fn planted_dictionary(d: usize, n_atoms: usize, k: usize, samples: usize, noise: f32, seed: u64) -> Result<Planted> {
    if d == 0 || k == 0 || k > n_atoms {
        return Err(Error::Config("planted dictionary needs d > 0 and 0 < k ≤ atoms".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let atoms = unit_atoms(&mut rng, n_atoms, d);
    let mut data = Vec::with_capacity(samples * d);
    for _ in 0..samples {
        let active: Vec<(usize, f32)> = rand::seq::index::sample(&mut rng, n_atoms, k)
            .into_iter()
            .map(|a| (a, rng.random_range(0.5f32..1.5)))
            .collect();
        compose(&atoms, d, &active, noise, &mut rng, &mut data);
    }
    Ok(Planted {
        atoms,
        n_atoms,
        data: EmbeddingShard::new(d, data)?,
    })
}

/// Dense mixture: `active` random atoms per sample, the `i`-th of them
/// (in draw order) weighted by `U(0.5, 1.5) · (i + 1)^(-decay)`. The best
/// `k`-term approximation keeps improving with `k`, so reconstruction quality
/// grows with the number of active features.
pub fn decaying_mixture(d: usize, n_atoms: usize, active: usize, samples: usize, decay: f64, seed: u64) -> Result<Planted> {
    if d == 0 || active == 0 || active > n_atoms || decay < 0.0 {
        return Err(Error::Config("mixture needs d > 0, 0 < active ≤ atoms and decay ≥ 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let atoms = unit_atoms(&mut rng, n_atoms, d);
    let weights: Vec<f32> = (0..active).map(|i| ((i + 1) as f64).powf(-decay) as f32).collect();
    let mut data = Vec::with_capacity(samples * d);
    for _ in 0..samples {
        let act: Vec<(usize, f32)> = rand::seq::index::sample(&mut rng, n_atoms, active)
            .into_iter()
            .zip(&weights)
            .map(|(a, w)| (a, w * rng.random_range(0.5f32..1.5)))
            .collect();
        compose(&atoms, d, &act, 0.0, &mut rng, &mut data);
    }
    Ok(Planted {
        atoms,
        n_atoms,
        data: EmbeddingShard::new(d, data)?,
    })
}
