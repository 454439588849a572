//! Clustering metrics against brute-force oracles on every small labeling.
//!
//! Raw label vectors over {0,1,2} are enumerated up to 6 points; for 7 and 8
//! points the metrics' relabeling invariance lets us enumerate canonical
//! (first-occurrence ordered) labelings instead.

use std::collections::HashMap;

use spf_core::eval::{metric_ami, metric_ari, metric_completeness};

const TOL: f64 = 1e-9;
const MAX_CLUSTERS: usize = 3;

fn all_labelings(n: usize) -> Vec<Vec<usize>> {
    (0..MAX_CLUSTERS.pow(n as u32))
        .map(|mut code| {
            (0..n)
                .map(|_| {
                    let l = code % MAX_CLUSTERS;
                    code /= MAX_CLUSTERS;
                    l
                })
                .collect()
        })
        .collect()
}

fn canonical_labelings(n: usize) -> Vec<Vec<usize>> {
    fn grow(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let used = prefix.iter().max().map_or(0, |m| m + 1);
        for l in 0..=used.min(MAX_CLUSTERS - 1) {
            prefix.push(l);
            grow(prefix, n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    grow(&mut Vec::new(), n, &mut out);
    out
}

fn same_partition(a: &[usize], b: &[usize]) -> bool {
    (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

fn ari_pairs(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len();
    if n < 2 || same_partition(pred, truth) {
        return 1.0;
    }
    let (mut n11, mut n10, mut n01, mut n00) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            match (pred[i] == pred[j], truth[i] == truth[j]) {
                (true, true) => n11 += 1.0,
                (true, false) => n10 += 1.0,
                (false, true) => n01 += 1.0,
                (false, false) => n00 += 1.0,
            }
        }
    }
    2.0 * (n00 * n11 - n01 * n10) / ((n00 + n01) * (n01 + n11) + (n00 + n10) * (n10 + n11))
}

fn entropy(labels: &[usize]) -> f64 {
    let n = labels.len() as f64;
    (0..MAX_CLUSTERS)
        .map(|c| labels.iter().filter(|&&l| l == c).count() as f64 / n)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}

fn mutual_info(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut mi = 0.0;
    for x in 0..MAX_CLUSTERS {
        for y in 0..MAX_CLUSTERS {
            let nxy = a.iter().zip(b).filter(|&(&p, &q)| p == x && q == y).count() as f64;
            if nxy > 0.0 {
                let nx = a.iter().filter(|&&p| p == x).count() as f64;
                let ny = b.iter().filter(|&&q| q == y).count() as f64;
                mi += nxy / n * (n * nxy / (nx * ny)).ln();
            }
        }
    }
    mi
}

/// `H(pred | truth)` from the conditional distribution of each true class.
fn completeness_direct(pred: &[usize], truth: &[usize]) -> f64 {
    if same_partition(pred, truth) {
        return 1.0;
    }
    let h_pred = entropy(pred);
    if h_pred == 0.0 {
        return 1.0;
    }
    let n = pred.len() as f64;
    let mut h_cond = 0.0;
    for t in 0..MAX_CLUSTERS {
        let members: Vec<usize> = (0..pred.len()).filter(|&i| truth[i] == t).map(|i| pred[i]).collect();
        if !members.is_empty() {
            h_cond += members.len() as f64 / n * entropy(&members);
        }
    }
    1.0 - h_cond / h_pred
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn block_sizes(labels: &[usize]) -> Vec<usize> {
    let mut s: Vec<usize> = (0..MAX_CLUSTERS).map(|c| labels.iter().filter(|&&l| l == c).count()).filter(|&c| c > 0).collect();
    s.sort_unstable();
    s
}

/// Expected MI under the permutation model, averaging over all `n!`
/// shuffles of `pred` against a fixed `truth`. Depends only on block sizes.
struct ExpectedMi {
    perms: HashMap<usize, Vec<Vec<usize>>>,
    cache: HashMap<(Vec<usize>, Vec<usize>), f64>,
}

impl ExpectedMi {
    fn new() -> Self {
        Self { perms: HashMap::new(), cache: HashMap::new() }
    }

    fn get(&mut self, pred: &[usize], truth: &[usize]) -> f64 {
        let key = (block_sizes(pred), block_sizes(truth));
        if let Some(&v) = self.cache.get(&key) {
            return v;
        }
        let n = pred.len();
        let perms = self.perms.entry(n).or_insert_with(|| permutations(n));
        let mut total = 0.0;
        for p in perms.iter() {
            let shuffled: Vec<usize> = p.iter().map(|&i| pred[i]).collect();
            total += mutual_info(&shuffled, truth);
        }
        let v = total / perms.len() as f64;
        self.cache.insert(key, v);
        v
    }
}

fn ami_oracle(pred: &[usize], truth: &[usize], emi: &mut ExpectedMi) -> f64 {
    if same_partition(pred, truth) {
        return 1.0;
    }
    let e = emi.get(pred, truth);
    let normalizer = 0.5 * (entropy(pred) + entropy(truth));
    (mutual_info(pred, truth) - e) / (normalizer - e)
}

fn check_all(labelings: &[Vec<usize>], emi: &mut ExpectedMi) -> usize {
    let mut checked = 0;
    for truth in labelings {
        for pred in labelings {
            let ctx = || format!("pred {pred:?} truth {truth:?}");
            let ari = metric_ari(pred, truth).unwrap();
            assert!((ari - ari_pairs(pred, truth)).abs() <= TOL, "ARI {ari} vs {} for {}", ari_pairs(pred, truth), ctx());
            let ami = metric_ami(pred, truth).unwrap();
            let want = ami_oracle(pred, truth, emi);
            assert!((ami - want).abs() <= TOL, "AMI {ami} vs {want} for {}", ctx());
            let com = metric_completeness(pred, truth).unwrap();
            let want = completeness_direct(pred, truth);
            assert!((com - want).abs() <= TOL, "completeness {com} vs {want} for {}", ctx());
            checked += 1;
        }
    }
    checked
}

#[test]
fn hand_cases() {
    let truth = [0, 0, 1, 1];
    let pred = [0, 1, 0, 1];
    assert!((metric_ari(&pred, &truth).unwrap() + 0.5).abs() < TOL);
    assert!(metric_completeness(&pred, &truth).unwrap().abs() < TOL);
    assert_eq!(metric_completeness(&[5, 5, 5, 5], &truth).unwrap(), 1.0);
    assert_eq!(metric_ami(&[5, 5, 5, 5], &truth).unwrap(), 0.0);
    assert_eq!(metric_ari(&["b", "b", "a", "a"], &truth).unwrap(), 1.0);
}

#[test]
fn raw_labelings_up_to_six_points() {
    let mut emi = ExpectedMi::new();
    let mut total = 0;
    for n in 1..=6 {
        total += check_all(&all_labelings(n), &mut emi);
    }
    assert_eq!(total, (1..=6).map(|n| 3usize.pow(2 * n)).sum::<usize>());
}

#[test]
fn canonical_labelings_seven_and_eight_points() {
    let mut emi = ExpectedMi::new();
    for n in [7, 8] {
        let labelings = canonical_labelings(n);
        // Stirling numbers: S(n,1) + S(n,2) + S(n,3).
        let expected = if n == 7 { 1 + 63 + 301 } else { 1 + 127 + 966 };
        assert_eq!(labelings.len(), expected);
        check_all(&labelings, &mut emi);
    }
}
