//! Partition agreement scores: adjusted Rand index, adjusted mutual
//! information (mean-entropy normalizer, exact hypergeometric expectation)
//! and completeness. Logarithms are natural.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Contingency table between two labelings, rows indexed by `pred` classes
/// in order of first appearance, columns by `truth` classes.
#[derive(Clone, Debug, PartialEq)]
pub struct Contingency {
    pub counts: Vec<Vec<usize>>,
    pub n: usize,
}

impl Contingency {
    pub fn new<A: Eq + Hash, B: Eq + Hash>(pred: &[A], truth: &[B]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::DimensionMismatch(format!("{} predicted vs {} true labels", pred.len(), truth.len())));
        }
        let (pi, r) = encode(pred);
        let (ti, c) = encode(truth);
        let mut counts = vec![vec![0usize; c]; r];
        for (&a, &b) in pi.iter().zip(&ti) {
            counts[a][b] += 1;
        }
        Ok(Self { counts, n: pred.len() })
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<usize> {
        let c = self.counts.first().map_or(0, Vec::len);
        (0..c).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    /// True when the two labelings induce the same partition.
    pub fn is_bijection(&self) -> bool {
        let rows_single = self.counts.iter().all(|r| r.iter().filter(|&&x| x > 0).count() == 1);
        let cols = self.col_sums().len();
        rows_single && self.counts.len() == cols
    }
}

fn encode<A: Eq + Hash>(labels: &[A]) -> (Vec<usize>, usize) {
    let mut ids: HashMap<&A, usize> = HashMap::new();
    let idx = labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(l).or_insert(next)
        })
        .collect();
    (idx, ids.len())
}

fn comb2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

fn entropy(sizes: &[usize], n: usize) -> f64 {
    let n = n as f64;
    -sizes.iter().filter(|&&s| s > 0).map(|&s| (s as f64 / n) * (s as f64 / n).ln()).sum::<f64>()
}

fn mutual_info(t: &Contingency) -> f64 {
    let (a, b) = (t.row_sums(), t.col_sums());
    let n = t.n as f64;
    let mut mi = 0.0;
    for (i, row) in t.counts.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (a[i] as f64 * b[j] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Expected mutual information of two random labelings with the observed
/// marginals under the hypergeometric permutation model.
pub fn expected_mutual_info(row_sums: &[usize], col_sums: &[usize], n: usize) -> f64 {
    let mut ln_fact = vec![0.0f64; n + 1];
    for k in 1..=n {
        ln_fact[k] = ln_fact[k - 1] + (k as f64).ln();
    }
    let nf = n as f64;
    let mut emi = 0.0;
    for &a in row_sums {
        for &b in col_sums {
            let lo = (a + b).saturating_sub(n).max(1);
            let hi = a.min(b);
            for nij in lo..=hi {
                let term = nij as f64 / nf * (nf * nij as f64 / (a as f64 * b as f64)).ln();
                let ln_p = ln_fact[a] + ln_fact[b] + ln_fact[n - a] + ln_fact[n - b]
                    - ln_fact[n]
                    - ln_fact[nij]
                    - ln_fact[a - nij]
                    - ln_fact[b - nij]
                    - ln_fact[n + nij - a - b];
                emi += term * ln_p.exp();
            }
        }
    }
    emi
}

pub fn metric_ari<A: Eq + Hash, B: Eq + Hash>(pred: &[A], truth: &[B]) -> Result<f64> {
    let t = Contingency::new(pred, truth)?;
    if t.is_bijection() || t.n < 2 {
        return Ok(1.0);
    }
    let index: f64 = t.counts.iter().flatten().map(|&x| comb2(x)).sum();
    let a: f64 = t.row_sums().into_iter().map(comb2).sum();
    let b: f64 = t.col_sums().into_iter().map(comb2).sum();
    let expected = a * b / comb2(t.n);
    let max = (a + b) / 2.0;
    Ok((index - expected) / (max - expected))
}

pub fn metric_ami<A: Eq + Hash, B: Eq + Hash>(pred: &[A], truth: &[B]) -> Result<f64> {
    let t = Contingency::new(pred, truth)?;
    if t.is_bijection() || t.n == 0 {
        return Ok(1.0);
    }
    let (a, b) = (t.row_sums(), t.col_sums());
    let mi = mutual_info(&t);
    let emi = expected_mutual_info(&a, &b, t.n);
    let normalizer = 0.5 * (entropy(&a, t.n) + entropy(&b, t.n));
    let denom = normalizer - emi;
    // Guard against a vanishing denominator the same way for either sign.
    let denom = if denom < 0.0 { denom.min(-f64::EPSILON) } else { denom.max(f64::EPSILON) };
    Ok((mi - emi) / denom)
}

/// 1 − H(pred | truth) / H(pred): every true class lies inside a single
/// predicted cluster exactly when the score is 1.
pub fn metric_completeness<A: Eq + Hash, B: Eq + Hash>(pred: &[A], truth: &[B]) -> Result<f64> {
    let t = Contingency::new(pred, truth)?;
    if t.is_bijection() {
        return Ok(1.0);
    }
    let h_pred = entropy(&t.row_sums(), t.n);
    if h_pred == 0.0 {
        return Ok(1.0);
    }
    let n = t.n as f64;
    let b = t.col_sums();
    let mut h_cond = 0.0;
    for row in &t.counts {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                h_cond -= nij as f64 / n * (nij as f64 / b[j] as f64).ln();
            }
        }
    }
    Ok(1.0 - h_cond / h_pred)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ari: f64,
    pub ami: f64,
    pub completeness: f64,
    pub n_spots: usize,
    pub n_clusters_pred: usize,
    pub n_clusters_true: usize,
}

impl MetricsReport {
    pub fn compute<A: Eq + Hash, B: Eq + Hash>(pred: &[A], truth: &[B]) -> Result<Self> {
        let t = Contingency::new(pred, truth)?;
        Ok(Self {
            ari: metric_ari(pred, truth)?,
            ami: metric_ami(pred, truth)?,
            completeness: metric_completeness(pred, truth)?,
            n_spots: t.n,
            n_clusters_pred: t.counts.len(),
            n_clusters_true: t.col_sums().len(),
        })
    }
}
