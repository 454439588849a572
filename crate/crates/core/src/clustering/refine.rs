//! Final domain assignment: mixture clustering, anchor selection and
//! anchored label diffusion over the spatial kernel graph.

use crate::error::{Error, Result};
use crate::numerics::{argmax, gmm_em_fit, Matrix, SeededRng};
use crate::scalar::Scalar;

pub const DEFAULT_ANCHOR_FRACTION: f64 = 0.01;
pub const DEFAULT_MAX_ITER: usize = 2;
pub const DEFAULT_TOL: f64 = 1e-6;

/// Fits a diagonal GMM with `c` components; returns hard labels and the
/// posterior matrix.
pub fn gmm_cluster<T: Scalar>(h: &Matrix<T>, c: usize, rng: &mut SeededRng) -> Result<(Vec<usize>, Matrix<T>)> {
    let model = gmm_em_fit(h, c, rng)?;
    let post = model.predict_proba(h);
    let labels = (0..post.rows()).map(|i| argmax(post.row(i))).collect();
    Ok((labels, post))
}

/// Neighbor agreement `Σ_j W_ij·1[ℓ_j = ℓ_i]` per spot.
pub fn agreement<T: Scalar>(labels: &[usize], w: &Matrix<T>) -> Vec<T> {
    (0..labels.len())
        .map(|i| {
            w.row(i)
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == labels[i])
                .fold(T::zero(), |a, (&v, _)| a + v)
        })
        .collect()
}

/// Per cluster, the `⌈fraction·size⌉` spots (at least one) with the highest
/// agreement; ties go to the lower index. Returned sorted.
pub fn find_anchors<T: Scalar>(labels: &[usize], w: &Matrix<T>, fraction: f64) -> Result<Vec<usize>> {
    if w.rows() != labels.len() || w.cols() != labels.len() {
        return Err(Error::DimensionMismatch(format!("{} labels but weights are {:?}", labels.len(), w.shape())));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument("anchor fraction must lie in [0, 1]".into()));
    }
    let agree = agreement(labels, w);
    let clusters = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut anchors = Vec::new();
    for c in 0..clusters {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let take = ((fraction * members.len() as f64).ceil() as usize).clamp(1, members.len());
        members.sort_by(|&a, &b| agree[b].partial_cmp(&agree[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
        anchors.extend_from_slice(&members[..take]);
    }
    anchors.sort_unstable();
    Ok(anchors)
}

pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Matrix<T> {
    let mut y = Matrix::zeros(labels.len(), classes);
    for (i, &l) in labels.iter().enumerate() {
        y[(i, l)] = T::one();
    }
    y
}

/// Iterate-by-iterate label diffusion with pinned anchor rows.
#[derive(Clone, Debug)]
pub struct DiffusionState<'a, T> {
    pub y: Matrix<T>,
    pub anchors: Vec<usize>,
    pub w: &'a Matrix<T>,
    pub iterations: usize,
    pinned: Matrix<T>,
}

impl<'a, T: Scalar> DiffusionState<'a, T> {
    pub fn new(y0: Matrix<T>, w: &'a Matrix<T>, anchors: &[usize]) -> Result<Self> {
        if w.shape() != (y0.rows(), y0.rows()) {
            return Err(Error::DimensionMismatch(format!("label matrix {:?}, weights {:?}", y0.shape(), w.shape())));
        }
        if let Some(&a) = anchors.iter().find(|&&a| a >= y0.rows()) {
            return Err(Error::DimensionMismatch(format!("anchor {a} outside {} spots", y0.rows())));
        }
        let pinned = y0.select_rows(anchors);
        Ok(Self { y: y0, anchors: anchors.to_vec(), w, iterations: 0, pinned })
    }

    /// One update `Y ← normalize(W·Y)` with anchors reset. Rows whose
    /// propagated mass is zero keep their previous values. Returns the
    /// largest absolute entry change.
    pub fn step(&mut self) -> T {
        let mut next = self.w.matmul(&self.y);
        for i in 0..next.rows() {
            let s = next.row(i).iter().copied().fold(T::zero(), |a, b| a + b);
            if s > T::zero() {
                for v in next.row_mut(i) {
                    *v = *v / s;
                }
            } else {
                next.row_mut(i).copy_from_slice(self.y.row(i));
            }
        }
        for (r, &a) in self.anchors.iter().enumerate() {
            next.row_mut(a).copy_from_slice(self.pinned.row(r));
        }
        let change = next.max_abs_diff(&self.y);
        self.y = next;
        self.iterations += 1;
        change
    }

    /// Row argmax, ties to the lower class.
    pub fn labels(&self) -> Vec<usize> {
        (0..self.y.rows()).map(|i| argmax(self.y.row(i))).collect()
    }
}

/// Runs diffusion until the largest change drops below `tol` or `max_iter`
/// iterations; returns final labels and iterations used.
pub fn propagate_labels<T: Scalar>(
    y0: &Matrix<T>,
    w: &Matrix<T>,
    anchors: &[usize],
    max_iter: usize,
    tol: f64,
) -> Result<(Vec<usize>, usize)> {
    let mut state = DiffusionState::new(y0.clone(), w, anchors)?;
    for _ in 0..max_iter {
        if state.step().as_f64() < tol {
            break;
        }
    }
    Ok((state.labels(), state.iterations))
}
