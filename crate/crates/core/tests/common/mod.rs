// SPDX-License-Identifier: MIT OR Apache-2.0
#![allow(dead_code)]

pub mod fake_bridge;

/// Greedy one-to-one matching of planted atoms (rows of `atoms`) to decoder
/// columns by descending cosine. Returns the matched cosine per atom (0 when unmatched).
pub fn greedy_match(atoms: &[f32], n_atoms: usize, columns: &[Vec<f32>]) -> Vec<f64> {
    let d = atoms.len() / n_atoms;
    let norm = |v: &[f32]| v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let mut pairs = Vec::with_capacity(n_atoms * columns.len());
    for a in 0..n_atoms {
        let av = &atoms[a * d..(a + 1) * d];
        let na = norm(av);
        for (c, col) in columns.iter().enumerate() {
            let dot: f64 = av.iter().zip(col).map(|(x, y)| *x as f64 * *y as f64).sum();
            pairs.push((dot / (na * norm(col)), a, c));
        }
    }
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut atom_used = vec![false; n_atoms];
    let mut col_used = vec![false; columns.len()];
    let mut best = vec![0.0; n_atoms];
    for (cos, a, c) in pairs {
        if !atom_used[a] && !col_used[c] {
            atom_used[a] = true;
            col_used[c] = true;
            best[a] = cos;
        }
    }
    best
}

/// Brute-force Spearman: average ranks by counting, then textbook Pearson.
pub fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|&a| {
                let less = v.iter().filter(|&&b| b < a).count() as f64;
                let equal = v.iter().filter(|&&b| b == a).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx).powi(2);
        syy += (ry[i] - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}
