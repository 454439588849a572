//! Stage I loss terms, as plain functions and as tape builders.

use crate::error::{Error, Result};
use crate::numerics::matrix::dot;
use crate::numerics::{Matrix, Tape, Var};
use crate::scalar::Scalar;

use super::model::GanParams;

/// Probability clamp applied before taking logarithms in the BCE.
pub const BCE_CLAMP: f64 = 1e-7;
/// Variance floor inside the KL logarithm.
const KL_VAR_FLOOR: f64 = 1e-8;
pub const DEFAULT_MASK_ALPHA: f64 = 3.0;

/// `‖X̂ − X‖²_F / (N·G)`.
pub fn loss_reconstruction<T: Scalar>(xhat: &Matrix<T>, x: &Matrix<T>) -> Result<T> {
    if xhat.shape() != x.shape() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", xhat.shape(), x.shape())));
    }
    let d = xhat.sub(x);
    Ok(d.map(|v| v * v).mean())
}

/// KL divergence of the per-dimension Gaussian moments of `z` from the
/// standard normal, averaged over dimensions.
pub fn moment_kl<T: Scalar>(z: &Matrix<T>) -> T {
    let n = T::from_usize_lossy(z.rows());
    let mu = z.col_means();
    let mut total = T::zero();
    for (j, &m) in mu.iter().enumerate() {
        let var = z.col(j).iter().map(|&v| (v - m) * (v - m)).fold(T::zero(), |a, b| a + b) / n + T::lit(KL_VAR_FLOOR);
        total = total + T::lit(0.5) * (var + m * m - T::one() - var.ln());
    }
    total / T::from_usize_lossy(mu.len().max(1))
}

/// Mean binary cross-entropy of `ahat` against `a` plus `kl_weight` times
/// the moment-matching KL of `z`.
pub fn loss_graph<T: Scalar>(ahat: &Matrix<T>, a: &Matrix<T>, z: &Matrix<T>, kl_weight: f64) -> Result<T> {
    if ahat.shape() != a.shape() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", ahat.shape(), a.shape())));
    }
    let lo = T::lit(BCE_CLAMP);
    let hi = T::one() - lo;
    let bce = ahat.zip_map(a, |p, y| {
        let p = p.max(lo).min(hi);
        -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
    });
    Ok(bce.mean() + T::lit(kl_weight) * moment_kl(z))
}

/// Mean over masked rows of `(1 − cos(x̂_i, x_i))^α`. Zero rows have cosine 0.
pub fn loss_mask<T: Scalar>(xhat: &Matrix<T>, x: &Matrix<T>, masked: &[usize], alpha: f64) -> Result<T> {
    if xhat.shape() != x.shape() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", xhat.shape(), x.shape())));
    }
    if masked.is_empty() {
        return Ok(T::zero());
    }
    let unit = |r: &[T]| {
        let n = dot(r, r).sqrt();
        r.iter().map(|&v| if n > T::zero() { v / n } else { T::zero() }).collect::<Vec<T>>()
    };
    let mut total = T::zero();
    for &i in masked {
        let c = dot(&unit(xhat.row(i)), &unit(x.row(i)));
        total = total + (T::one() - c).max(T::zero()).powf(T::lit(alpha));
    }
    Ok(total / T::from_usize_lossy(masked.len()))
}

/// Unbiased MMD² estimate under `kernel`. Within-sample terms average over
/// `i ≠ j`; when both samples have the same size the cross term does too,
/// which makes the estimate exactly zero for identical inputs.
pub fn mmd_unbiased<T: Scalar>(u: &Matrix<T>, v: &Matrix<T>, kernel: impl Fn(&[T], &[T]) -> T) -> Result<T> {
    let (m, n) = (u.rows(), v.rows());
    if m < 2 || n < 2 {
        return Err(Error::SampleTooSmall(m, n));
    }
    if u.cols() != v.cols() {
        return Err(Error::DimensionMismatch(format!("sample widths {} and {}", u.cols(), v.cols())));
    }
    let within = |s: &Matrix<T>| {
        let r = s.rows();
        let mut acc = T::zero();
        for i in 0..r {
            for j in 0..r {
                if i != j {
                    acc = acc + kernel(s.row(i), s.row(j));
                }
            }
        }
        acc / T::from_usize_lossy(r * (r - 1))
    };
    let paired = m == n;
    let mut cross = T::zero();
    for i in 0..m {
        for j in 0..n {
            if !(paired && i == j) {
                cross = cross + kernel(u.row(i), v.row(j));
            }
        }
    }
    let pairs = if paired { m * (m - 1) } else { m * n };
    cross = cross / T::from_usize_lossy(pairs);
    Ok(within(u) + within(v) - T::lit(2.0) * cross)
}

/// Fisher feature of each row: the gradient of the summed generator output
/// with respect to its final-layer weights and bias, with the row injected
/// as the final-layer input. Columns follow `w2` row-major, then `b2`.
pub fn fisher_features<T: Scalar>(samples: &Matrix<T>, gan: &GanParams<T>) -> Result<Matrix<T>> {
    let (h, g) = (gan.hidden(), gan.genes());
    if samples.cols() != h {
        return Err(Error::DimensionMismatch(format!(
            "samples have width {}, generator final layer takes {h}",
            samples.cols()
        )));
    }
    Ok(Matrix::from_fn(samples.rows(), g * (h + 1), |r, c| {
        if c < g * h { samples[(r, c / g)] } else { T::one() }
    }))
}

/// Normalized Fisher kernel `⟨φ(a), φ(b)⟩ / d_φ`, which for the final-layer
/// feature map reduces to `(⟨a,b⟩ + 1) / (h + 1)`.
pub fn fisher_kernel<T: Scalar>(a: &[T], b: &[T]) -> T {
    (dot(a, b) + T::one()) / T::from_usize_lossy(a.len() + 1)
}

pub fn fisher_mmd<T: Scalar>(u: &Matrix<T>, v: &Matrix<T>, gan: &GanParams<T>) -> Result<T> {
    if u.cols() != gan.hidden() {
        return Err(Error::DimensionMismatch(format!(
            "samples have width {}, generator final layer takes {}",
            u.cols(),
            gan.hidden()
        )));
    }
    mmd_unbiased(u, v, fisher_kernel)
}

fn offdiag_mask<T: Scalar>(r: usize, c: usize) -> Matrix<T> {
    Matrix::from_fn(r, c, |i, j| if i == j { T::zero() } else { T::one() })
}

/// Tape version of [`fisher_mmd`]. Both operands may carry gradients.
pub(crate) fn fisher_mmd_tape<T: Scalar>(t: &mut Tape<T>, u: Var, v: Var) -> Var {
    let (m, h) = t.value(u).shape();
    let n = t.value(v).rows();
    let inv = T::one() / T::from_usize_lossy(h + 1);
    let mean_kernel = |t: &mut Tape<T>, a: Var, b: Var, skip_diag: bool| {
        let (r, c) = (t.value(a).rows(), t.value(b).rows());
        let g = t.matmul_nt(a, b);
        let k = t.add_scalar(g, T::one());
        let k = t.scale(k, inv);
        let (k, count) = if skip_diag {
            let mask = t.constant(offdiag_mask(r, c));
            (t.mul(k, mask), r * c - r.min(c))
        } else {
            (k, r * c)
        };
        let s = t.sum(k);
        t.scale(s, T::one() / T::from_usize_lossy(count))
    };
    let kuu = mean_kernel(t, u, u, true);
    let kvv = mean_kernel(t, v, v, true);
    let kuv = mean_kernel(t, u, v, m == n);
    let within = t.add(kuu, kvv);
    let cross = t.scale(kuv, T::lit(2.0));
    t.sub(within, cross)
}

/// BCE of `sigmoid(logits)` against binary `a`, computed stably from
/// logits. With `balanced`, edges and non-edges each contribute half of the
/// loss (the mean over each class, averaged); otherwise a plain mean.
pub(crate) fn bce_logits_tape<T: Scalar>(t: &mut Tape<T>, logits: Var, a: &Matrix<T>, balanced: bool) -> Var {
    let w = bce_weights(a, balanced);
    let sp = t.softplus(logits);
    let av = t.constant(a.clone());
    let as_ = t.mul(av, logits);
    let d = t.sub(sp, as_);
    let wv = t.constant(w);
    let d = t.mul(d, wv);
    t.sum(d)
}

/// Per-entry BCE weights summing to one.
pub(crate) fn bce_weights<T: Scalar>(a: &Matrix<T>, balanced: bool) -> Matrix<T> {
    let total = a.rows() * a.cols();
    let pos = a.as_slice().iter().filter(|&&v| v > T::lit(0.5)).count();
    let neg = total - pos;
    if !balanced || pos == 0 || neg == 0 {
        return Matrix::filled(a.rows(), a.cols(), T::one() / T::from_usize_lossy(total));
    }
    let (wp, wn) = (T::lit(0.5) / T::from_usize_lossy(pos), T::lit(0.5) / T::from_usize_lossy(neg));
    a.map(|v| if v > T::lit(0.5) { wp } else { wn })
}

pub(crate) fn moment_kl_tape<T: Scalar>(t: &mut Tape<T>, z: Var) -> Var {
    let mu = t.col_mean(z);
    let c = t.sub_row(z, mu);
    let sq = t.square(c);
    let var = t.col_mean(sq);
    let var = t.add_scalar(var, T::lit(KL_VAR_FLOOR));
    let mu2 = t.square(mu);
    let lv = t.ln(var);
    let s = t.add(var, mu2);
    let s = t.sub(s, lv);
    let s = t.add_scalar(s, -T::one());
    let m = t.mean(s);
    t.scale(m, T::lit(0.5))
}

pub(crate) fn reconstruction_tape<T: Scalar>(t: &mut Tape<T>, xhat: Var, x: &Matrix<T>) -> Var {
    let xv = t.constant(x.clone());
    let d = t.sub(xhat, xv);
    let sq = t.square(d);
    t.mean(sq)
}

pub(crate) fn mask_tape<T: Scalar>(t: &mut Tape<T>, xhat: Var, x: &Matrix<T>, masked: &[usize], alpha: f64) -> Var {
    if masked.is_empty() {
        return t.constant(Matrix::zeros(1, 1));
    }
    let target = crate::numerics::tape::normalize_rows(&x.select_rows(masked));
    let rows = t.gather_rows(xhat, masked);
    let unit = t.row_l2_normalize(rows);
    let tv = t.constant(target);
    let prod = t.mul(unit, tv);
    let cos = t.row_sum(prod);
    let base = t.scale(cos, -T::one());
    let base = t.add_scalar(base, T::one());
    let base = t.relu(base);
    let p = t.powf(base, T::lit(alpha));
    t.mean(p)
}
