//! Diagonal-covariance Gaussian mixture fitted by expectation maximization.

use crate::error::{Error, Result};
use crate::numerics::kmeans::{check_finite, kmeans_fit};
use crate::numerics::matrix::Matrix;
use crate::numerics::rng::SeededRng;
use crate::scalar::Scalar;

pub const GMM_VARIANCE_FLOOR: f64 = 1e-6;
pub const GMM_TOL: f64 = 1e-6;
pub const GMM_MAX_ITER: usize = 200;
const COLLAPSE_MASS: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct GmmModel<T> {
    pub k: usize,
    pub means: Matrix<T>,
    /// Per-component diagonal variances, `K×d`.
    pub variances: Matrix<T>,
    pub weights: Vec<T>,
    /// Total log-likelihood of the training data under the final model.
    pub log_likelihood: T,
    /// Log-likelihood evaluated at each E-step.
    pub log_likelihood_trace: Vec<T>,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

impl<T: Scalar> GmmModel<T> {
    /// `N×K` matrix of `ln(w_k) + ln N(x_i | μ_k, Σ_k)`.
    fn joint_log_density(&self, data: &Matrix<T>) -> Vec<Vec<f64>> {
        let d = data.cols();
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        (0..data.rows())
            .map(|i| {
                let x = data.row(i);
                (0..self.k)
                    .map(|c| {
                        let mut acc = self.weights[c].as_f64().ln() - 0.5 * d as f64 * ln2pi;
                        for j in 0..d {
                            let v = self.variances[(c, j)].as_f64();
                            let diff = x[j].as_f64() - self.means[(c, j)].as_f64();
                            acc -= 0.5 * (v.ln() + diff * diff / v);
                        }
                        acc
                    })
                    .collect()
            })
            .collect()
    }

    /// Posterior responsibilities (`N×K`) and total log-likelihood.
    fn e_step(&self, data: &Matrix<T>) -> (Vec<Vec<f64>>, f64) {
        let mut ll = 0.0;
        let resp = self
            .joint_log_density(data)
            .into_iter()
            .map(|row| {
                let lse = log_sum_exp(&row);
                ll += lse;
                row.into_iter().map(|x| (x - lse).exp()).collect()
            })
            .collect();
        (resp, ll)
    }

    pub fn predict_proba(&self, data: &Matrix<T>) -> Matrix<T> {
        let (resp, _) = self.e_step(data);
        Matrix::from_fn(data.rows(), self.k, |i, c| T::lit(resp[i][c]))
    }

    /// Hard labels: argmax posterior, ties to the lower component id.
    pub fn predict(&self, data: &Matrix<T>) -> Vec<usize> {
        let post = self.predict_proba(data);
        (0..data.rows()).map(|i| argmax(post.row(i))).collect()
    }
}

/// First index of the maximum value.
pub fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (j, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = j;
        }
    }
    best
}

fn m_step<T: Scalar>(data: &Matrix<T>, resp: &[Vec<f64>], model: &mut GmmModel<T>) -> Option<usize> {
    let (n, d) = data.shape();
    let floor = GMM_VARIANCE_FLOOR;
    for c in 0..model.k {
        let mass: f64 = resp.iter().map(|r| r[c]).sum();
        if mass < COLLAPSE_MASS {
            return Some(c);
        }
        for j in 0..d {
            let mu = resp.iter().enumerate().map(|(i, r)| r[c] * data[(i, j)].as_f64()).sum::<f64>() / mass;
            let var = resp
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let diff = data[(i, j)].as_f64() - mu;
                    r[c] * diff * diff
                })
                .sum::<f64>()
                / mass;
            model.means[(c, j)] = T::lit(mu);
            model.variances[(c, j)] = T::lit(var.max(floor));
        }
        model.weights[c] = T::lit(mass / n as f64);
    }
    None
}

fn reseed<T: Scalar>(data: &Matrix<T>, model: &mut GmmModel<T>, c: usize) {
    // Worst-explained point becomes the new mean; variance from the whole data.
    let joint = model.joint_log_density(data);
    let worst = (0..data.rows())
        .min_by(|&a, &b| log_sum_exp(&joint[a]).partial_cmp(&log_sum_exp(&joint[b])).expect("finite"))
        .unwrap_or(0);
    let means = data.col_means();
    for j in 0..data.cols() {
        model.means[(c, j)] = data[(worst, j)];
        let var = (0..data.rows())
            .map(|i| (data[(i, j)] - means[j]).as_f64().powi(2))
            .sum::<f64>()
            / data.rows() as f64;
        model.variances[(c, j)] = T::lit(var.max(GMM_VARIANCE_FLOOR));
    }
    let k = model.k as f64;
    for w in model.weights.iter_mut() {
        *w = T::lit(1.0 / k);
    }
}

/// Fits a `k`-component diagonal GMM initialized from k-means.
pub fn gmm_em_fit<T: Scalar>(data: &Matrix<T>, k: usize, rng: &mut SeededRng) -> Result<GmmModel<T>> {
    check_finite(data)?;
    let (n, d) = data.shape();
    if n < k {
        return Err(Error::TooFewPoints { needed: k, got: n });
    }
    let km = kmeans_fit(data, k, rng)?;
    let mut model = GmmModel {
        k,
        means: km.centroids.clone(),
        variances: Matrix::filled(k, d, T::lit(GMM_VARIANCE_FLOOR)),
        weights: vec![T::zero(); k],
        log_likelihood: T::neg_infinity(),
        log_likelihood_trace: Vec::new(),
    };
    let hard: Vec<Vec<f64>> = km
        .labels
        .iter()
        .map(|&l| (0..k).map(|c| if c == l { 1.0 } else { 0.0 }).collect())
        .collect();
    if let Some(c) = m_step(data, &hard, &mut model) {
        return Err(Error::DegenerateCluster(c));
    }

    let mut reseeded = false;
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..GMM_MAX_ITER {
        let (resp, ll) = model.e_step(data);
        model.log_likelihood_trace.push(T::lit(ll));
        model.log_likelihood = T::lit(ll);
        if ll - prev < GMM_TOL && prev.is_finite() {
            break;
        }
        prev = ll;
        if let Some(c) = m_step(data, &resp, &mut model) {
            if reseeded {
                return Err(Error::DegenerateCluster(c));
            }
            reseeded = true;
            reseed(data, &mut model, c);
            model.log_likelihood_trace.clear();
            prev = f64::NEG_INFINITY;
        }
    }
    Ok(model)
}
