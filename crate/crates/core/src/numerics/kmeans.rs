//! Lloyd's k-means with k-means++ seeding and best-of-restarts selection.

use crate::error::{Error, Result};
use crate::numerics::matrix::{sq_dist, Matrix};
use crate::numerics::rng::SeededRng;
use crate::scalar::Scalar;

pub const KMEANS_RESTARTS: usize = 5;
pub const KMEANS_MAX_ITER: usize = 300;

#[derive(Clone, Debug)]
pub struct KMeansFit<T> {
    pub centroids: Matrix<T>,
    pub labels: Vec<usize>,
    pub sse: T,
    /// SSE after each Lloyd iteration of the winning restart.
    pub sse_trace: Vec<T>,
}

pub(crate) fn check_finite<T: Scalar>(data: &Matrix<T>) -> Result<()> {
    if data.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

fn nearest<T: Scalar>(x: &[T], centroids: &Matrix<T>) -> (usize, T) {
    let mut best = (0, T::infinity());
    for j in 0..centroids.rows() {
        let d = sq_dist(x, centroids.row(j));
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_seed<T: Scalar>(data: &Matrix<T>, k: usize, rng: &mut SeededRng) -> Matrix<T> {
    let n = data.rows();
    let mut chosen = vec![rng.below(n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), data.row(chosen[0])).as_f64()).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.uniform() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.below(n)
        };
        chosen.push(next);
        for (i, slot) in d2.iter_mut().enumerate() {
            let d = sq_dist(data.row(i), data.row(next)).as_f64();
            if d < *slot {
                *slot = d;
            }
        }
    }
    data.select_rows(&chosen)
}

fn lloyd<T: Scalar>(data: &Matrix<T>, mut centroids: Matrix<T>) -> KMeansFit<T> {
    let (n, d) = data.shape();
    let k = centroids.rows();
    let mut labels = vec![usize::MAX; n];
    let mut sse_trace = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        let mut dists = vec![T::zero(); n];
        for i in 0..n {
            let (j, dist) = nearest(data.row(i), &centroids);
            dists[i] = dist;
            if labels[i] != j {
                labels[i] = j;
                changed = true;
            }
        }
        // Empty clusters take the point farthest from its current centroid.
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[labels[i]] > 1)
                    .fold(None, |best: Option<usize>, i| match best {
                        Some(b) if dists[b] >= dists[i] => Some(b),
                        _ => Some(i),
                    });
                if let Some(i) = far {
                    counts[labels[i]] -= 1;
                    labels[i] = j;
                    counts[j] = 1;
                    dists[i] = T::zero();
                    changed = true;
                }
            }
        }
        let mut sums = Matrix::<T>::zeros(k, d);
        for i in 0..n {
            let l = labels[i];
            for (s, &x) in sums.row_mut(l).iter_mut().zip(data.row(i)) {
                *s = *s + x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let c = T::from_usize_lossy(counts[j]);
                for (dst, &s) in centroids.row_mut(j).iter_mut().zip(sums.row(j)) {
                    *dst = s / c;
                }
            }
        }
        let sse = (0..n).fold(T::zero(), |acc, i| acc + sq_dist(data.row(i), centroids.row(labels[i])));
        sse_trace.push(sse);
        if !changed {
            break;
        }
    }
    let sse = *sse_trace.last().unwrap_or(&T::zero());
    KMeansFit { centroids, labels, sse, sse_trace }
}

/// Fits `k` centroids. Keeps the lowest-SSE run out of [`KMEANS_RESTARTS`].
pub fn kmeans_fit<T: Scalar>(data: &Matrix<T>, k: usize, rng: &mut SeededRng) -> Result<KMeansFit<T>> {
    check_finite(data)?;
    let n = data.rows();
    if k == 0 {
        return Err(Error::InvalidArgument("k-means needs k >= 1".into()));
    }
    if n < k {
        return Err(Error::TooFewPoints { needed: k, got: n });
    }
    let mut best: Option<KMeansFit<T>> = None;
    for _ in 0..KMEANS_RESTARTS {
        let seeds = plus_plus_seed(data, k, rng);
        let fit = lloyd(data, seeds);
        if best.as_ref().is_none_or(|b| fit.sse < b.sse) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}
