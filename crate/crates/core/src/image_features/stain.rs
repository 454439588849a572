//! Affine per-channel stain normalization against reference statistics.

use crate::dataio::RgbImage;
use crate::error::{Error, Result};

use super::patches::is_foreground;

/// Lower bound on a channel standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-3;

/// Per-channel mean and standard deviation of tissue pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StainStats {
    pub mu: [f64; 3],
    pub sigma: [f64; 3],
}

impl StainStats {
    /// Pooled moments of the given pixels. Standard deviations are raised
    /// to [`SIGMA_FLOOR`].
    pub fn from_pixels(pixels: impl Iterator<Item = [u8; 3]>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        for p in pixels {
            n += 1;
            for c in 0..3 {
                let v = p[c] as f64;
                sum[c] += v;
                sq[c] += v * v;
            }
        }
        if n == 0 {
            return Err(Error::NoForeground);
        }
        let nf = n as f64;
        let mu = sum.map(|s| s / nf);
        let sigma = std::array::from_fn(|c| (sq[c] / nf - mu[c] * mu[c]).max(0.0).sqrt().max(SIGMA_FLOOR));
        Ok(Self { mu, sigma })
    }

    /// Statistics of the image's tissue pixels.
    pub fn foreground(image: &RgbImage) -> Result<Self> {
        Self::from_pixels(image.pixels.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).filter(|&p| is_foreground(p)))
    }
}

/// Maps every pixel through `(v − μ_raw)/σ_raw · σ_tgt + μ_tgt`, clamped to
/// `[0, 255]` and rounded half-to-even.
pub fn stain_normalize(image: &RgbImage, raw: &StainStats, target: &StainStats) -> Result<RgbImage> {
    if let Some(c) = (0..3).find(|&c| raw.sigma[c] < SIGMA_FLOOR) {
        return Err(Error::DegenerateStats(c));
    }
    let mut out = image.clone();
    for (i, v) in out.pixels.iter_mut().enumerate() {
        let c = i % 3;
        let x = (*v as f64 - raw.mu[c]) / raw.sigma[c] * target.sigma[c] + target.mu[c];
        *v = x.clamp(0.0, 255.0).round_ties_even() as u8;
    }
    Ok(out)
}
