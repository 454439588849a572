//! Cross-modal alignment losses, as plain functions and tape builders.

use crate::error::{Error, Result};
use crate::numerics::tape::{normalize_rows, softmax_rows};
use crate::numerics::{Matrix, Tape, Var};
use crate::scalar::Scalar;

fn same_shape<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Row-softmax of cosine similarities over `τ`, self-pairs excluded.
pub fn similarity_distribution<T: Scalar>(h: &Matrix<T>, tau: f64) -> Matrix<T> {
    let u = normalize_rows(h);
    let s = u.matmul_nt(&u).scale(T::one() / T::lit(tau));
    softmax_rows(&s, true)
}

fn row_kl<T: Scalar>(p: &[T], q: &[T]) -> T {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > T::zero())
        .fold(T::zero(), |acc, (&a, &b)| acc + a * (a / b).ln())
}

/// Symmetrized KL between the intra-modal similarity distributions,
/// averaged over rows.
pub fn loss_sdm<T: Scalar>(h_i: &Matrix<T>, h_g: &Matrix<T>, tau: f64) -> Result<T> {
    same_shape(h_i, h_g)?;
    if h_i.rows() < 2 {
        return Err(Error::SingleRow);
    }
    let pi = similarity_distribution(h_i, tau);
    let pg = similarity_distribution(h_g, tau);
    let mut total = T::zero();
    for r in 0..pi.rows() {
        total = total + row_kl(pi.row(r), pg.row(r)) + row_kl(pg.row(r), pi.row(r));
    }
    Ok(total / T::lit(2.0) / T::from_usize_lossy(pi.rows()))
}

fn log_softmax_diag<T: Scalar>(logits: &Matrix<T>) -> T {
    let mut total = T::zero();
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let top = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = top + row.iter().map(|&v| (v - top).exp()).fold(T::zero(), |a, b| a + b).ln();
        total = total + (row[i] - lse);
    }
    total
}

/// Symmetric InfoNCE over matched rows using cosine similarity over `τ`.
pub fn loss_contrastive<T: Scalar>(h_i: &Matrix<T>, h_g: &Matrix<T>, tau: f64) -> Result<T> {
    same_shape(h_i, h_g)?;
    if h_i.rows() == 0 {
        return Err(Error::EmptyResult);
    }
    let s = normalize_rows(h_i).matmul_nt(&normalize_rows(h_g)).scale(T::one() / T::lit(tau));
    let n = T::from_usize_lossy(h_i.rows());
    Ok(-(log_softmax_diag(&s) + log_softmax_diag(&s.transpose())) / (T::lit(2.0) * n))
}

/// `(‖H_I‖_F + ‖H_G‖_F) / √(N·d)`.
pub fn loss_reg<T: Scalar>(h_i: &Matrix<T>, h_g: &Matrix<T>) -> Result<T> {
    same_shape(h_i, h_g)?;
    let scale = T::from_usize_lossy(h_i.rows() * h_i.cols()).sqrt();
    Ok((h_i.frobenius_norm() + h_g.frobenius_norm()) / scale)
}

fn offdiag<T: Scalar>(n: usize) -> Matrix<T> {
    Matrix::from_fn(n, n, |i, j| if i == j { T::zero() } else { T::one() })
}

pub(crate) fn sdm_tape<T: Scalar>(t: &mut Tape<T>, h_i: Var, h_g: Var, tau: f64) -> Var {
    let n = t.value(h_i).rows();
    let inv_tau = T::one() / T::lit(tau);
    let logp = |t: &mut Tape<T>, h: Var| {
        let u = t.row_l2_normalize(h);
        let s = t.matmul_nt(u, u);
        let s = t.scale(s, inv_tau);
        t.log_softmax_rows(s, true)
    };
    let lpi = logp(t, h_i);
    let lpg = logp(t, h_g);
    let mask = t.constant(offdiag(n));
    let pi = t.exp(lpi);
    let pi = t.mul(pi, mask);
    let pg = t.exp(lpg);
    let pg = t.mul(pg, mask);
    // KL(P_I‖P_G) + KL(P_G‖P_I) = Σ (P_I − P_G)(log P_I − log P_G)
    let dp = t.sub(pi, pg);
    let dl = t.sub(lpi, lpg);
    let prod = t.mul(dp, dl);
    let s = t.sum(prod);
    t.scale(s, T::lit(0.5) / T::from_usize_lossy(n))
}

pub(crate) fn contrastive_tape<T: Scalar>(t: &mut Tape<T>, h_i: Var, h_g: Var, tau: f64) -> Var {
    let n = t.value(h_i).rows();
    let ui = t.row_l2_normalize(h_i);
    let ug = t.row_l2_normalize(h_g);
    let s = t.matmul_nt(ui, ug);
    let s = t.scale(s, T::one() / T::lit(tau));
    let st = t.transpose(s);
    let eye = t.constant(Matrix::identity(n));
    let diag_sum = |t: &mut Tape<T>, m: Var| {
        let l = t.log_softmax_rows(m, false);
        let d = t.mul(l, eye);
        t.sum(d)
    };
    let a = diag_sum(t, s);
    let b = diag_sum(t, st);
    let total = t.add(a, b);
    t.scale(total, -T::one() / (T::lit(2.0) * T::from_usize_lossy(n)))
}

pub(crate) fn reg_tape<T: Scalar>(t: &mut Tape<T>, h_i: Var, h_g: Var) -> Var {
    let (n, d) = t.value(h_i).shape();
    let norm = |t: &mut Tape<T>, h: Var| {
        let sq = t.square(h);
        let s = t.sum(sq);
        // Keeps the derivative finite at the origin.
        let s = t.add_scalar(s, T::lit(1e-12));
        t.sqrt(s)
    };
    let a = norm(t, h_i);
    let b = norm(t, h_g);
    let s = t.add(a, b);
    t.scale(s, T::one() / T::from_usize_lossy(n * d).sqrt())
}
