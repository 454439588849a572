//! Patch extraction around spot centers, quality scoring and selection of
//! stain-reference patches.

use crate::dataio::RgbImage;
use crate::error::{Error, Result};
use crate::numerics::{kmeans_fit, Matrix, SeededRng};
use crate::scalar::Scalar;

use super::stain::StainStats;

pub const PATCH_SIZE: usize = 64;
pub const PATCH_HALF: usize = PATCH_SIZE / 2;
/// Pixels with luminance below this fraction of 255 count as tissue.
pub const FOREGROUND_LUMINANCE: f64 = 0.85;
pub const DEFAULT_TARGET_CLUSTERS: usize = 8;
pub const DEFAULT_TOP_FRACTION: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub spot_index: usize,
    /// Row-major `64×64×3` RGB; the spot center sits at index (32, 32).
    pub pixels: Vec<u8>,
    /// Center in image pixel coordinates.
    pub center: (f64, f64),
}

pub fn luminance(rgb: [u8; 3]) -> f64 {
    0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64
}

pub fn is_foreground(rgb: [u8; 3]) -> bool {
    luminance(rgb) < FOREGROUND_LUMINANCE * 255.0
}

impl Patch {
    pub fn get(&self, row: usize, col: usize) -> [u8; 3] {
        let o = 3 * (row * PATCH_SIZE + col);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn rgb(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.pixels.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// Luminance plane, row-major.
    pub fn luma(&self) -> Vec<f64> {
        self.rgb().map(luminance).collect()
    }
}

/// Mirror index into `0..n` without repeating the edge sample
/// (`… 2 1 | 0 1 2 … n-1 | n-2 …`).
pub fn reflect_index(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < n as i64 { m } else { period - m }) as usize
}

/// One 64×64 patch per spot centered at `gamma·(x, y)`, reflecting at the
/// image border.
pub fn extract_patches<T: Scalar>(image: &RgbImage, coords: &Matrix<T>, gamma: f64) -> Result<Vec<Patch>> {
    if coords.cols() != 2 {
        return Err(Error::DimensionMismatch(format!("coordinates must have 2 columns, got {}", coords.cols())));
    }
    let mut out = Vec::with_capacity(coords.rows());
    for i in 0..coords.rows() {
        let (x, y) = (coords[(i, 0)].as_f64() * gamma, coords[(i, 1)].as_f64() * gamma);
        if !(x >= 0.0 && y >= 0.0 && x < image.width as f64 && y < image.height as f64) {
            return Err(Error::CenterOutsideImage { x, y, width: image.width, height: image.height });
        }
        let (cx, cy) = (x.floor() as i64, y.floor() as i64);
        let mut pixels = Vec::with_capacity(PATCH_SIZE * PATCH_SIZE * 3);
        for r in 0..PATCH_SIZE as i64 {
            let iy = reflect_index(cy - PATCH_HALF as i64 + r, image.height);
            for c in 0..PATCH_SIZE as i64 {
                let ix = reflect_index(cx - PATCH_HALF as i64 + c, image.width);
                pixels.extend_from_slice(&image.get(ix, iy));
            }
        }
        out.push(Patch { spot_index: i, pixels, center: (x, y) });
    }
    Ok(out)
}

fn mean_std(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = xs.collect();
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

/// Mean forward-difference gradient magnitude of a square plane.
pub(crate) fn mean_gradient(plane: &[f64], size: usize) -> f64 {
    let mut total = 0.0;
    for r in 0..size - 1 {
        for c in 0..size - 1 {
            let v = plane[r * size + c];
            let gx = plane[r * size + c + 1] - v;
            let gy = plane[(r + 1) * size + c] - v;
            total += (gx * gx + gy * gy).sqrt();
        }
    }
    total / ((size - 1) * (size - 1)) as f64
}

/// Unnormalized score components of a patch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreComponents {
    /// Fraction of tissue pixels.
    pub coverage: f64,
    /// Standard deviation of luminance.
    pub contrast: f64,
    /// Mean gradient magnitude of luminance.
    pub texture: f64,
    /// Mean of the per-channel standard deviations.
    pub color_diversity: f64,
}

impl ScoreComponents {
    pub fn of(patch: &Patch) -> Self {
        let luma = patch.luma();
        let fg = patch.rgb().filter(|&p| is_foreground(p)).count();
        let color_diversity = (0..3).map(|c| mean_std(patch.rgb().map(|p| p[c] as f64)).1).sum::<f64>() / 3.0;
        Self {
            coverage: fg as f64 / (PATCH_SIZE * PATCH_SIZE) as f64,
            contrast: mean_std(luma.iter().copied()).1,
            texture: mean_gradient(&luma, PATCH_SIZE),
            color_diversity,
        }
    }

    fn as_array(&self) -> [f64; 4] {
        [self.coverage, self.contrast, self.texture, self.color_diversity]
    }
}

const SCORE_WEIGHTS: [f64; 4] = [0.4, 0.2, 0.2, 0.2];

/// Composite quality score in `[0, 1]` from components min-max normalized
/// over the slide. A component that is constant across the slide scores 0.
pub fn score_patches(patches: &[Patch]) -> Vec<f64> {
    let comps: Vec<[f64; 4]> = patches.iter().map(|p| ScoreComponents::of(p).as_array()).collect();
    let mut lo = [f64::INFINITY; 4];
    let mut hi = [f64::NEG_INFINITY; 4];
    for c in &comps {
        for k in 0..4 {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    comps
        .iter()
        .map(|c| {
            (0..4)
                .map(|k| {
                    let span = hi[k] - lo[k];
                    let v = if span > 0.0 { (c[k] - lo[k]) / span } else { 0.0 };
                    SCORE_WEIGHTS[k] * v
                })
                .sum()
        })
        .collect()
}

/// Reference patches chosen for stain normalization and their pooled
/// foreground statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSelection {
    /// Indices into the patch list.
    pub targets: Vec<usize>,
    pub stats: StainStats,
}

/// Keeps the top `top_fraction` of patches by score, clusters them on mean
/// color and score, and takes the best-scoring patch of every cluster.
pub fn select_target_patches(
    patches: &[Patch],
    scores: &[f64],
    n_clusters: usize,
    top_fraction: f64,
    rng: &mut SeededRng,
) -> Result<TargetSelection> {
    if scores.len() != patches.len() {
        return Err(Error::DimensionMismatch(format!("{} scores for {} patches", scores.len(), patches.len())));
    }
    if n_clusters == 0 {
        return Err(Error::InvalidArgument("need at least one target cluster".into()));
    }
    let keep = ((top_fraction * patches.len() as f64).ceil() as usize).min(patches.len());
    let mut order: Vec<usize> = (0..patches.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let qualified = &order[..keep];
    if qualified.len() < n_clusters {
        return Err(Error::TooFewQualifiedPatches { needed: n_clusters, got: qualified.len() });
    }
    let features = Matrix::<f64>::from_fn(qualified.len(), 4, |r, c| {
        let p = &patches[qualified[r]];
        if c < 3 {
            p.rgb().map(|px| px[c] as f64).sum::<f64>() / (255.0 * (PATCH_SIZE * PATCH_SIZE) as f64)
        } else {
            scores[qualified[r]]
        }
    });
    let fit = kmeans_fit(&features, n_clusters, rng)?;
    let mut best: Vec<Option<usize>> = vec![None; n_clusters];
    // `qualified` is sorted best-first, so the first member seen wins.
    for (r, &l) in fit.labels.iter().enumerate() {
        best[l].get_or_insert(qualified[r]);
    }
    let mut targets: Vec<usize> = best.into_iter().flatten().collect();
    targets.sort_unstable();
    let stats = StainStats::from_pixels(targets.iter().flat_map(|&t| patches[t].rgb()).filter(|&p| is_foreground(p)))?;
    Ok(TargetSelection { targets, stats })
}
