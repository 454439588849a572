//! Patch embeddings (precomputed or a deterministic toy featurizer) and
//! Gaussian KNN smoothing across neighboring spots.

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;
use crate::spatial_graph::{knn, median_neighbor_distance};

use super::patches::{is_foreground, luminance, mean_gradient, Patch, PATCH_SIZE};

pub const TOY_WIDTH: usize = 48;
pub const DEFAULT_SMOOTHING: f64 = 0.3;
const HIST_BINS: usize = 8;
const BLOCKS: usize = 4;

/// Source of raw patch embeddings.
#[derive(Clone, Debug, PartialEq)]
pub enum PatchEncoder {
    /// Rows supplied externally, already aligned with the spots.
    Precomputed(Matrix<f32>),
    /// Color histograms, channel moments, block means, tissue fraction and
    /// gradient energy.
    Toy,
}

impl PatchEncoder {
    pub fn id(&self) -> &'static str {
        match self {
            PatchEncoder::Precomputed(_) => "precomputed",
            PatchEncoder::Toy => "toy",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchEmbeddingSet<T> {
    pub raw: Matrix<T>,
    pub smoothed: Matrix<T>,
    pub encoder_id: String,
}

/// Unstandardized toy features of one patch.
pub fn toy_features(patch: &Patch) -> [f64; TOY_WIDTH] {
    let mut f = [0.0; TOY_WIDTH];
    let npx = (PATCH_SIZE * PATCH_SIZE) as f64;
    for px in patch.rgb() {
        for c in 0..3 {
            let bin = (px[c] as usize * HIST_BINS) / 256;
            f[c * HIST_BINS + bin] += 1.0 / npx;
        }
    }
    let mut o = 3 * HIST_BINS;
    for c in 0..3 {
        let m = patch.rgb().map(|p| p[c] as f64).sum::<f64>() / npx;
        let v = patch.rgb().map(|p| (p[c] as f64 - m).powi(2)).sum::<f64>() / npx;
        f[o] = m;
        f[o + 1] = v.sqrt();
        o += 2;
    }
    let luma: Vec<f64> = patch.rgb().map(luminance).collect();
    let block = PATCH_SIZE / BLOCKS;
    for br in 0..BLOCKS {
        for bc in 0..BLOCKS {
            let mut s = 0.0;
            for r in br * block..(br + 1) * block {
                for c in bc * block..(bc + 1) * block {
                    s += luma[r * PATCH_SIZE + c];
                }
            }
            f[o] = s / (block * block) as f64;
            o += 1;
        }
    }
    f[o] = patch.rgb().filter(|&p| is_foreground(p)).count() as f64 / npx;
    f[o + 1] = mean_gradient(&luma, PATCH_SIZE);
    f
}

/// Column z-scoring; constant columns become zero.
pub fn zscore_columns<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    let n = T::from_usize_lossy(m.rows().max(1));
    let means = m.col_means();
    let sds: Vec<T> = (0..m.cols())
        .map(|j| (m.col(j).iter().map(|&v| (v - means[j]) * (v - means[j])).fold(T::zero(), |a, b| a + b) / n).sqrt())
        .collect();
    Matrix::from_fn(m.rows(), m.cols(), |i, j| {
        if sds[j] > T::lit(1e-12) { (m[(i, j)] - means[j]) / sds[j] } else { T::zero() }
    })
}

pub fn encode_patches<T: Scalar>(patches: &[Patch], encoder: &PatchEncoder) -> Result<Matrix<T>> {
    match encoder {
        PatchEncoder::Precomputed(m) => {
            if m.rows() != patches.len() {
                return Err(Error::EmbeddingShapeMismatch(format!(
                    "{} embedding rows for {} spots",
                    m.rows(),
                    patches.len()
                )));
            }
            Ok(m.cast())
        }
        PatchEncoder::Toy => {
            let mut raw = Matrix::<T>::zeros(patches.len(), TOY_WIDTH);
            for (i, p) in patches.iter().enumerate() {
                for (o, v) in raw.row_mut(i).iter_mut().zip(toy_features(p)) {
                    *o = T::lit(v);
                }
            }
            Ok(zscore_columns(&raw))
        }
    }
}

/// `ṽ_i = (1−λ) v_i + λ Σ_j w_ij v_j` over the `k` nearest spots, with
/// `w_ij ∝ exp(−d_ij² / 2σ²)` normalized per spot and σ the median
/// neighbor distance.
pub fn smooth_embeddings<T: Scalar>(raw: &Matrix<T>, coords: &Matrix<T>, k: usize, lambda: f64) -> Result<Matrix<T>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("smoothing weight {lambda} outside [0, 1]")));
    }
    if raw.rows() != coords.rows() {
        return Err(Error::RowMisalignment(coords.rows(), raw.rows()));
    }
    let nbrs = knn(coords, k)?;
    let sigma = median_neighbor_distance(&nbrs);
    let two_s2 = 2.0 * sigma * sigma;
    let lam = T::lit(lambda);
    let mut out = raw.scale(T::one() - lam);
    for (i, list) in nbrs.iter().enumerate() {
        let w: Vec<f64> = list
            .iter()
            .map(|&(_, d2)| if two_s2 > 0.0 { (-d2.as_f64() / two_s2).exp() } else { 1.0 })
            .collect();
        let c: f64 = w.iter().sum();
        for (&(j, _), &wj) in list.iter().zip(&w) {
            let s = lam * T::lit(wj / c);
            let src = raw.row(j).to_vec();
            for (o, v) in out.row_mut(i).iter_mut().zip(src) {
                *o = *o + s * v;
            }
        }
    }
    Ok(out)
}
