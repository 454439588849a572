//! Principal component analysis via thin SVD of the column-centered matrix.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct Pca<T> {
    pub mean: Vec<T>,
    /// `components × G` loadings, rows orthonormal (zero rows past the rank).
    pub loadings: Matrix<T>,
    pub singular_values: Vec<T>,
}

impl<T: Scalar> Pca<T> {
    pub fn fit(data: &Matrix<T>, components: usize) -> Result<Self> {
        let (n, g) = data.shape();
        if components > n.min(g) {
            return Err(Error::InvalidArgument(format!(
                "{components} components requested from a {n}x{g} matrix"
            )));
        }
        if !data.all_finite() {
            return Err(Error::NonFinite);
        }
        let mean = data.col_means();
        let centered = DMatrix::<f64>::from_fn(n, g, |i, j| (data[(i, j)] - mean[j]).as_f64());
        let svd = centered.svd(false, true);
        let v_t = svd.v_t.expect("requested V^T");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[b].partial_cmp(&svd.singular_values[a]).expect("finite singular values")
        });
        let top = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let tol = top * 1e-12 * (n.max(g) as f64);
        let mut loadings = Matrix::<T>::zeros(components, g);
        let mut singular_values = vec![T::zero(); components];
        for (c, &k) in order.iter().take(components).enumerate() {
            let s = svd.singular_values[k];
            if s <= tol {
                continue;
            }
            let row: Vec<f64> = v_t.row(k).iter().cloned().collect();
            let pivot = row.iter().cloned().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            for (dst, x) in loadings.row_mut(c).iter_mut().zip(row) {
                *dst = T::lit(sign * x);
            }
            singular_values[c] = T::lit(s);
        }
        Ok(Self { mean, loadings, singular_values })
    }

    pub fn transform(&self, data: &Matrix<T>) -> Matrix<T> {
        let centered = Matrix::from_fn(data.rows(), data.cols(), |i, j| data[(i, j)] - self.mean[j]);
        centered.matmul_nt(&self.loadings)
    }
}

/// Projects `data` onto its top `components` principal axes.
pub fn pca_fit_transform<T: Scalar>(data: &Matrix<T>, components: usize) -> Result<Matrix<T>> {
    let pca = Pca::fit(data, components)?;
    Ok(pca.transform(data))
}
