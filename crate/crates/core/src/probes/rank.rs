// SPDX-License-Identifier: MIT OR Apache-2.0

//! Spearman rank correlation, correlation screens and redundancy statistics.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// 1-based ranks with ties sharing the average of their positions.
pub fn rank_average(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && v[idx[j]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Ranks centred and scaled to unit norm; `None` for constant input.
fn unit_ranks(v: &[f64]) -> Option<Vec<f64>> {
    let r = rank_average(v);
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    let ss: f64 = r.iter().map(|x| (x - mean) * (x - mean)).sum();
    if ss <= 0.0 {
        return None;
    }
    let norm = ss.sqrt();
    Some(r.into_iter().map(|x| (x - mean) / norm).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0)
}

/// Spearman ρ over complete pairs; `None` when fewer than three pairs or either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return None;
    }
    Some(dot(&unit_ranks(x)?, &unit_ranks(y)?))
}

/// Two-sided p-value of `ρ` on `n` pairs from Student-t with `n − 2` degrees of freedom.
pub fn spearman_p(rho: f64, n: usize) -> f64 {
    if n < 3 {
        return 1.0;
    }
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// One variable with an optional per-cell validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub values: Vec<f64>,
    pub valid: Option<Vec<bool>>,
}

impl Column {
    pub fn complete(values: Vec<f64>) -> Self {
        Self { values, valid: None }
    }

    pub fn from_options(cells: &[Option<f64>]) -> Self {
        let valid: Vec<bool> = cells.iter().map(Option::is_some).collect();
        let values = cells.iter().map(|c| c.unwrap_or(0.0)).collect();
        if valid.iter().all(|&v| v) {
            Self { values, valid: None }
        } else {
            Self {
                values,
                valid: Some(valid),
            }
        }
    }

    fn is_valid(&self, i: usize) -> bool {
        self.valid.as_ref().is_none_or(|v| v[i])
    }
}

/// Columns of a row-major f32 matrix.
pub fn columns_of(x: &[f32], cols: usize) -> Vec<Column> {
    (0..cols)
        .map(|j| Column::complete(x.chunks_exact(cols).map(|r| r[j] as f64).collect()))
        .collect()
}

/// `p × q` grid of correlations between the columns of `a` and `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpearmanMatrix {
    pub p: usize,
    pub q: usize,
    /// Row-major `p × q`; `None` marks an undefined cell.
    pub rho: Vec<Option<f64>>,
    pub pvals: Vec<Option<f64>>,
    pub n: Vec<usize>,
}

impl SpearmanMatrix {
    pub fn rho(&self, i: usize, j: usize) -> Option<f64> {
        self.rho[i * self.q + j]
    }

    pub fn pval(&self, i: usize, j: usize) -> Option<f64> {
        self.pvals[i * self.q + j]
    }
}

fn group_by_mask(cols: &[Column]) -> BTreeMap<Vec<bool>, Vec<usize>> {
    let mut groups: BTreeMap<Vec<bool>, Vec<usize>> = BTreeMap::new();
    for (j, c) in cols.iter().enumerate() {
        let key = c.valid.clone().unwrap_or_default();
        groups.entry(key).or_default().push(j);
    }
    groups
}

/// Spearman ρ and p for every (a column, b column) pair. Missing cells drop pairwise.
pub fn spearman_matrix(a: &[Column], b: &[Column]) -> Result<SpearmanMatrix> {
    let count = a.first().or(b.first()).map(|c| c.values.len()).unwrap_or(0);
    if a.iter().chain(b).any(|c| c.values.len() != count || c.valid.as_ref().is_some_and(|v| v.len() != count)) {
        return Err(Error::Shape("columns differ in length".into()));
    }
    if count < 3 {
        return Err(Error::EmptyData("need at least three rows for Spearman".into()));
    }
    let (p, q) = (a.len(), b.len());
    let mut rho = vec![None; p * q];
    let mut pvals = vec![None; p * q];
    let mut ns = vec![0; p * q];
    let ga = group_by_mask(a);
    let gb = group_by_mask(b);
    for ia in ga.values() {
        for ib in gb.values() {
            let rows: Vec<usize> = (0..count)
                .filter(|&i| a[ia[0]].is_valid(i) && b[ib[0]].is_valid(i))
                .collect();
            let n = rows.len();
            let prep = |c: &Column| -> Option<Vec<f64>> {
                if n < 3 {
                    return None;
                }
                unit_ranks(&rows.iter().map(|&i| c.values[i]).collect::<Vec<_>>())
            };
            let za: Vec<Option<Vec<f64>>> = ia.par_iter().map(|&j| prep(&a[j])).collect();
            let zb: Vec<Option<Vec<f64>>> = ib.par_iter().map(|&j| prep(&b[j])).collect();
            let cells: Vec<Vec<Option<f64>>> = za
                .par_iter()
                .map(|ra| {
                    zb.iter()
                        .map(|rb| match (ra, rb) {
                            (Some(x), Some(y)) => Some(dot(x, y)),
                            _ => None,
                        })
                        .collect()
                })
                .collect();
            for (ai, &i) in ia.iter().enumerate() {
                for (bj, &j) in ib.iter().enumerate() {
                    let r = cells[ai][bj];
                    rho[i * q + j] = r;
                    pvals[i * q + j] = r.map(|r| spearman_p(r, n));
                    ns[i * q + j] = n;
                }
            }
        }
    }
    Ok(SpearmanMatrix {
        p,
        q,
        rho,
        pvals,
        n: ns,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopRelationship {
    pub variable: usize,
    pub descriptor: usize,
    pub rho: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub threshold: f64,
    pub alpha: f64,
    /// Per descriptor: variables with `|ρ| ≥ threshold` and `p < alpha`.
    pub counts_significant: Vec<usize>,
    /// Per descriptor: variables with `|ρ| ≥ threshold`, no significance filter.
    pub counts_unfiltered: Vec<usize>,
    pub mean_significant: f64,
    pub sd_significant: f64,
    pub mean_unfiltered: f64,
    pub sd_unfiltered: f64,
    pub top: Vec<TopRelationship>,
    pub unique_top_variables: usize,
}

/// Mean and population standard deviation.
pub(crate) fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

/// Summarizes a variables × descriptors matrix.
pub fn correlation_summary(m: &SpearmanMatrix, threshold: f64, alpha: f64, top_n: usize) -> CorrelationSummary {
    let mut sig = vec![0usize; m.q];
    let mut unf = vec![0usize; m.q];
    let mut cand = vec![];
    for i in 0..m.p {
        for j in 0..m.q {
            let (Some(r), Some(p)) = (m.rho(i, j), m.pval(i, j)) else {
                continue;
            };
            if r.abs() >= threshold {
                unf[j] += 1;
                if p < alpha {
                    sig[j] += 1;
                }
            }
            if p < alpha {
                cand.push(TopRelationship {
                    variable: i,
                    descriptor: j,
                    rho: r,
                    p_value: p,
                });
            }
        }
    }
    cand.sort_by(|x, y| {
        y.rho
            .abs()
            .total_cmp(&x.rho.abs())
            .then(x.variable.cmp(&y.variable))
            .then(x.descriptor.cmp(&y.descriptor))
    });
    cand.truncate(top_n);
    let mut vars: Vec<usize> = cand.iter().map(|t| t.variable).collect();
    vars.sort_unstable();
    vars.dedup();
    let as_f = |v: &[usize]| v.iter().map(|&c| c as f64).collect::<Vec<_>>();
    let (mean_significant, sd_significant) = mean_sd(&as_f(&sig));
    let (mean_unfiltered, sd_unfiltered) = mean_sd(&as_f(&unf));
    CorrelationSummary {
        threshold,
        alpha,
        counts_significant: sig,
        counts_unfiltered: unf,
        mean_significant,
        sd_significant,
        mean_unfiltered,
        sd_unfiltered,
        top: cand,
        unique_top_variables: vars.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Redundancy {
    pub mean_abs_rho: f64,
    pub sd_abs_rho: f64,
    pub pairs: usize,
    pub exhaustive: bool,
    pub constant_columns: usize,
}

/// Mean ± sd of `|ρ|` between distinct columns of row-major `x`. All pairs are
/// used when there are at most `max_pairs`, otherwise `max_pairs` seeded draws.
pub fn pairwise_redundancy(x: &[f32], cols: usize, max_pairs: usize, seed: u64) -> Result<Redundancy> {
    if cols < 2 || !x.len().is_multiple_of(cols) {
        return Err(Error::Shape("redundancy needs at least two columns".into()));
    }
    let z: Vec<Option<Vec<f64>>> = columns_of(x, cols)
        .par_iter()
        .map(|c| if c.values.len() < 3 { None } else { unit_ranks(&c.values) })
        .collect();
    let constant_columns = z.iter().filter(|c| c.is_none()).count();
    let live: Vec<&Vec<f64>> = z.iter().flatten().collect();
    let m = live.len();
    if m < 2 {
        return Err(Error::EmptyData("fewer than two non-constant columns".into()));
    }
    let total = m * (m - 1) / 2;
    let exhaustive = total <= max_pairs;
    let pairs: Vec<(usize, usize)> = if exhaustive {
        (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..max_pairs)
            .map(|_| {
                let i = rng.random_range(0..m);
                let mut j = rng.random_range(0..m - 1);
                if j >= i {
                    j += 1;
                }
                (i.min(j), i.max(j))
            })
            .collect()
    };
    let vals: Vec<f64> = pairs.par_iter().map(|&(i, j)| dot(live[i], live[j]).abs()).collect();
    let (mean, sd) = mean_sd(&vals);
    Ok(Redundancy {
        mean_abs_rho: mean,
        sd_abs_rho: sd,
        pairs: vals.len(),
        exhaustive,
        constant_columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(rank_average(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn monotone_and_reversed() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        assert!((spearman(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let z: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((spearman(&x, &z).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(spearman(&x, &[1.0; 10]), None);
    }

    #[test]
    fn p_value_known_point() {
        // ρ = 0.5 on 12 pairs: t = 0.5·√(10/0.75) ≈ 1.8257, two-sided p ≈ 0.0979.
        let p = spearman_p(0.5, 12);
        assert!((p - 0.09790).abs() < 5e-4, "{p}");
    }

    #[test]
    fn matrix_drops_missing_pairwise() {
        let a = vec![Column::complete(vec![1.0, 2.0, 3.0, 4.0, 5.0])];
        let b = vec![
            Column::from_options(&[Some(1.0), None, Some(3.0), Some(4.0), Some(5.0)]),
            Column::from_options(&[Some(5.0), Some(4.0), None, None, Some(1.0)]),
        ];
        let m = spearman_matrix(&a, &b).unwrap();
        assert_eq!(m.rho(0, 0), Some(1.0));
        assert_eq!(m.n[0], 4);
        assert!((m.rho(0, 1).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(m.n[1], 3);
    }

    #[test]
    fn too_few_pairs_flagged() {
        let a = vec![Column::complete(vec![1.0, 2.0, 3.0, 4.0])];
        let b = vec![Column::from_options(&[Some(1.0), None, None, Some(2.0)])];
        let m = spearman_matrix(&a, &b).unwrap();
        assert_eq!(m.rho(0, 0), None);
    }

    #[test]
    fn identity_summary() {
        let n = 30;
        let cols: Vec<Column> = (0..4)
            .map(|j| Column::complete((0..n).map(|i| ((i * (j + 3) * 7919) % 101) as f64).collect()))
            .collect();
        let m = spearman_matrix(&cols, &cols).unwrap();
        let s = correlation_summary(&m, 0.99, 0.05, 100);
        assert_eq!(s.counts_significant, vec![1; 4]);
        assert_eq!(s.unique_top_variables, 4);
        let none = correlation_summary(&m, 1.01, 0.05, 100);
        assert!(none.counts_unfiltered.iter().all(|&c| c == 0));
    }

    #[test]
    fn redundancy_of_duplicates_and_pairs() {
        let x: Vec<f32> = (0..50).flat_map(|i| [i as f32, i as f32]).collect();
        let r = pairwise_redundancy(&x, 2, 1_000_000, 0).unwrap();
        assert!((r.mean_abs_rho - 1.0).abs() < 1e-12);
        assert_eq!(r.sd_abs_rho, 0.0);
        assert_eq!(r.pairs, 1);
    }

    #[test]
    fn redundancy_counts_constant_columns() {
        let x: Vec<f32> = (0..20).flat_map(|i| [i as f32, 1.0, (i * i) as f32]).collect();
        let r = pairwise_redundancy(&x, 3, 10, 0).unwrap();
        assert_eq!(r.constant_columns, 1);
        assert_eq!(r.pairs, 1);
    }
}
