//! Spot neighborhood graphs: the self-looped KNN graph with its symmetric
//! normalization, and the Gaussian kernel weights used by label diffusion.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use crate::dataio::formats::write_text;
use crate::error::{Error, Result};
use crate::numerics::matrix::sq_dist;
use crate::numerics::Matrix;
use crate::scalar::Scalar;

pub const DEFAULT_K: usize = 6;

#[derive(Clone, Debug)]
pub struct SpatialGraph<T> {
    pub n: usize,
    pub k: usize,
    /// Undirected edges `(i, j)` with `i <= j`, self-loops included, sorted.
    pub edges: Vec<(usize, usize)>,
    /// Binary adjacency `A` with unit diagonal.
    pub adjacency: Matrix<T>,
    /// `D^{-1/2} A D^{-1/2}`.
    pub normalized: Matrix<T>,
    pub degrees: Vec<T>,
}

/// Gaussian weights on directed KNN pairs.
#[derive(Clone, Debug)]
pub struct KernelWeights<T> {
    pub w: Matrix<T>,
    pub sigma: T,
}

/// Copies `coords`, nudging exact duplicates apart by 1e-9 along x.
fn dedup_coords<T: Scalar>(coords: &Matrix<T>) -> Matrix<T> {
    let mut out = coords.clone();
    let mut nudged = 0;
    for i in 1..out.rows() {
        let mut moved = false;
        for _ in 0..i {
            if !(0..i).any(|j| out.row(j) == out.row(i)) {
                break;
            }
            out[(i, 0)] = out[(i, 0)] + T::lit(1e-9);
            moved = true;
        }
        nudged += usize::from(moved);
    }
    if nudged > 0 {
        warn!("perturbed {nudged} duplicate spot coordinates by 1e-9");
    }
    out
}

/// For each spot, its `k` nearest other spots by Euclidean distance; ties go
/// to the lower index. Returns `(neighbor, squared distance)` pairs.
pub fn knn<T: Scalar>(coords: &Matrix<T>, k: usize) -> Result<Vec<Vec<(usize, T)>>> {
    let n = coords.rows();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if n <= k {
        return Err(Error::TooFewSpots { n, k });
    }
    if !coords.all_finite() {
        return Err(Error::NonFinite);
    }
    let coords = dedup_coords(coords);
    Ok((0..n)
        .map(|i| {
            let mut cand: Vec<(usize, T)> =
                (0..n).filter(|&j| j != i).map(|j| (j, sq_dist(coords.row(i), coords.row(j)))).collect();
            cand.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite distances").then(a.0.cmp(&b.0)));
            cand.truncate(k);
            cand
        })
        .collect())
}

/// Symmetric normalization `D^{-1/2} A D^{-1/2}` of a nonnegative matrix.
pub fn normalize_adjacency<T: Scalar>(a: &Matrix<T>) -> (Matrix<T>, Vec<T>) {
    let degrees = a.row_sums();
    let norm = Matrix::from_fn(a.rows(), a.cols(), |i, j| {
        let x = a[(i, j)];
        if x == T::zero() {
            T::zero()
        } else {
            x / (degrees[i] * degrees[j]).sqrt()
        }
    });
    (norm, degrees)
}

/// KNN graph symmetrized by union, with self-loops.
pub fn build_knn_graph<T: Scalar>(coords: &Matrix<T>, k: usize) -> Result<SpatialGraph<T>> {
    let n = coords.rows();
    let nbrs = knn(coords, k)?;
    let mut adjacency = Matrix::identity(n);
    for (i, list) in nbrs.iter().enumerate() {
        for &(j, _) in list {
            adjacency[(i, j)] = T::one();
            adjacency[(j, i)] = T::one();
        }
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i..n {
            if adjacency[(i, j)] != T::zero() {
                edges.push((i, j));
            }
        }
    }
    let (normalized, degrees) = normalize_adjacency(&adjacency);
    Ok(SpatialGraph { n, k, edges, adjacency, normalized, degrees })
}

impl<T: Scalar> SpatialGraph<T> {
    /// Graph with self-loops only; `Ã = I`.
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            k: 0,
            edges: (0..n).map(|i| (i, i)).collect(),
            adjacency: Matrix::identity(n),
            normalized: Matrix::identity(n),
            degrees: vec![T::one(); n],
        }
    }

    /// Writes `i,j,weight` rows (normalized weights) for every stored edge.
    pub fn write_edges_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("i,j,weight\n");
        for &(i, j) in &self.edges {
            writeln!(s, "{i},{j},{}", self.normalized[(i, j)]).expect("string write");
        }
        write_text(path, &s)
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Median distance over all directed KNN pairs.
pub fn median_neighbor_distance<T: Scalar>(nbrs: &[Vec<(usize, T)>]) -> f64 {
    median(nbrs.iter().flatten().map(|&(_, d2)| d2.as_f64().sqrt()).collect())
}

/// `W_ij = exp(-‖x_i − x_j‖² / σ²)` for `j` among the `k` nearest neighbors of
/// `i`, else 0; σ is the median neighbor distance.
pub fn build_gaussian_kernel<T: Scalar>(coords: &Matrix<T>, k: usize) -> Result<KernelWeights<T>> {
    let n = coords.rows();
    let nbrs = knn(coords, k)?;
    let sigma = median_neighbor_distance(&nbrs);
    if sigma <= 0.0 {
        return Err(Error::ZeroBandwidth);
    }
    let s2 = sigma * sigma;
    let mut w = Matrix::zeros(n, n);
    for (i, list) in nbrs.iter().enumerate() {
        for &(j, d2) in list {
            w[(i, j)] = T::lit((-d2.as_f64() / s2).exp());
        }
    }
    Ok(KernelWeights { w, sigma: T::lit(sigma) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    #[test]
    fn two_spots_hand_normalization() {
        let c = Matrix::<f64>::from_f64(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let g = build_knn_graph(&c, 1).unwrap();
        assert_eq!(g.adjacency.as_slice(), &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(g.normalized.as_slice(), &[0.5, 0.5, 0.5, 0.5]);
        assert_eq!(g.edges, vec![(0, 0), (0, 1), (1, 1)]);
    }

    #[test]
    fn k_zero_and_too_few_spots() {
        let c = Matrix::<f64>::from_f64(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        assert!(build_knn_graph(&c, 0).is_err());
        assert!(matches!(build_knn_graph(&c, 2), Err(Error::TooFewSpots { .. })));
    }

    #[test]
    fn hex_interior_spot_selects_ring() {
        // Offset-row hex lattice, unit spacing.
        let mut pts = Vec::new();
        for r in 0..5 {
            for c in 0..5 {
                pts.push([c as f64 + 0.5 * (r % 2) as f64, r as f64 * 3f64.sqrt() / 2.0]);
            }
        }
        let coords = Matrix::<f64>::from_rows(&pts);
        let center = 2 * 5 + 2;
        // Brute force: all spots at distance 1 (within rounding).
        let mut ring: Vec<usize> = (0..pts.len())
            .filter(|&j| {
                let d = ((pts[j][0] - pts[center][0]).powi(2) + (pts[j][1] - pts[center][1]).powi(2)).sqrt();
                j != center && (d - 1.0).abs() < 1e-9
            })
            .collect();
        ring.sort();
        assert_eq!(ring.len(), 6);
        let nbrs = knn(&coords, 6).unwrap();
        let mut got: Vec<usize> = nbrs[center].iter().map(|p| p.0).collect();
        got.sort();
        assert_eq!(got, ring);
    }

    #[test]
    fn kernel_collinear_hand_values() {
        let c = Matrix::<f64>::from_f64(3, 2, &[0.0, 0.0, 2.0, 0.0, 4.0, 0.0]);
        let kw = build_gaussian_kernel(&c, 1).unwrap();
        assert_eq!(kw.sigma, 2.0);
        let e1 = (-1.0f64).exp();
        assert_eq!(kw.w[(0, 1)], e1);
        assert_eq!(kw.w[(2, 1)], e1);
        // Tie at the middle spot resolves to the lower index.
        assert_eq!(kw.w[(1, 0)], e1);
        assert_eq!(kw.w[(1, 2)], 0.0);
        assert_eq!(kw.w[(0, 2)], 0.0);
    }

    #[test]
    fn zero_bandwidth() {
        let c = Matrix::<f64>::zeros(3, 2);
        // Duplicates are nudged by 1e-9, so the bandwidth is tiny but positive.
        let kw = build_gaussian_kernel(&c, 1).unwrap();
        assert!(kw.sigma > 0.0 && kw.sigma < 1e-8);
    }

    #[test]
    fn normalized_symmetric_and_spectrum_bounded() {
        let mut rng = SeededRng::new(5);
        let coords = Matrix::<f64>::from_fn(120, 2, |_, _| rng.uniform() * 50.0);
        let g = build_knn_graph(&coords, 6).unwrap();
        assert_eq!(g.normalized, g.normalized.transpose());
        let m = nalgebra::DMatrix::from_row_slice(120, 120, g.normalized.as_slice());
        let eig = m.symmetric_eigen();
        for &l in eig.eigenvalues.iter() {
            assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&l), "eigenvalue {l}");
        }
        for i in 0..120 {
            let expected: f64 = (0..120).map(|j| g.adjacency[(i, j)] / (g.degrees[i] * g.degrees[j]).sqrt()).sum();
            assert!((g.normalized.row(i).iter().sum::<f64>() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn invariant_under_rigid_motion() {
        let mut rng = SeededRng::new(6);
        let coords = Matrix::<f64>::from_fn(40, 2, |_, _| rng.uniform() * 10.0);
        let (s, c) = (0.3f64.sin(), 0.3f64.cos());
        let moved = Matrix::from_fn(40, 2, |i, j| {
            let (x, y) = (coords[(i, 0)], coords[(i, 1)]);
            if j == 0 { c * x - s * y + 100.0 } else { s * x + c * y - 7.0 }
        });
        let a = build_knn_graph(&coords, 5).unwrap();
        let b = build_knn_graph(&moved, 5).unwrap();
        assert_eq!(a.edges, b.edges);
    }
}
