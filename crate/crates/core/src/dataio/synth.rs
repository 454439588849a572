//! Synthetic spatial datasets with planted domains, used as ground truth.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dataio::dataset::{Dataset, ExpressionMatrix};
use crate::dataio::formats::RgbImage;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, SeededRng};
use crate::scalar::Scalar;
use crate::spatial_graph::knn;

/// H&E-like domain colors (pink to purple).
const PALETTE: [[f64; 3]; 8] = [
    [196.0, 96.0, 150.0],
    [112.0, 64.0, 168.0],
    [220.0, 150.0, 182.0],
    [150.0, 48.0, 96.0],
    [176.0, 120.0, 210.0],
    [96.0, 40.0, 120.0],
    [210.0, 110.0, 110.0],
    [140.0, 100.0, 150.0],
];
const BACKGROUND: [f64; 3] = [244.0, 242.0, 244.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub domains: usize,
    pub genes: usize,
    pub markers_per_domain: usize,
    /// Mean Poisson rate of a gene before domain and noise effects.
    pub base_rate: f64,
    /// Standard deviation of the per-entry log-normal rate jitter.
    pub noise: f64,
    /// Multiplicative rate increase of a marker gene inside its domain.
    pub marker_fold: f64,
    /// Trailing domains that reuse the markers of the domain before them,
    /// making them indistinguishable by expression alone.
    pub confounded_domains: usize,
    pub with_image: bool,
    /// 0 gives every domain the same color, 1 the full palette contrast.
    pub image_signal: f64,
    pub pixel_noise: f64,
    /// Full-resolution distance between adjacent spots.
    pub spacing: f64,
    pub scale_factor: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            grid_rows: 16,
            grid_cols: 16,
            domains: 4,
            genes: 200,
            markers_per_domain: 20,
            base_rate: 5.0,
            noise: 0.5,
            marker_fold: 3.0,
            confounded_domains: 0,
            with_image: true,
            image_signal: 1.0,
            pixel_noise: 12.0,
            spacing: 100.0,
            scale_factor: 0.5,
        }
    }
}

/// Flood fill over the `k`-NN graph; true when every label's spots form one
/// connected component.
pub fn labels_contiguous<T: Scalar>(coords: &Matrix<T>, labels: &[usize], k: usize) -> bool {
    let nbrs = match knn(coords, k) {
        Ok(n) => n,
        Err(_) => return false,
    };
    let n = labels.len();
    let mut adj = vec![Vec::new(); n];
    for (i, list) in nbrs.iter().enumerate() {
        for &(j, _) in list {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    let n_labels = labels.iter().max().map_or(0, |m| m + 1);
    for l in 0..n_labels {
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == l).collect();
        let Some(&start) = members.first() else { continue };
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut count = 0;
        while let Some(i) = queue.pop_front() {
            count += 1;
            for &j in &adj[i] {
                if !seen[j] && labels[j] == l {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if count != members.len() {
            return false;
        }
    }
    true
}

fn nearest_site(p: [f64; 2], sites: &[[f64; 2]]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (k, s) in sites.iter().enumerate() {
        let d = (p[0] - s[0]).powi(2) + (p[1] - s[1]).powi(2);
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}

/// Hex-offset grid with a Voronoi partition into `domains` contiguous regions,
/// Poisson counts with domain markers, and an optional raster in which each
/// spot's Voronoi cell is painted with its domain color.
pub fn generate_synthetic<T: Scalar>(spec: &SynthSpec, rng: &mut SeededRng) -> Result<Dataset<T>> {
    if spec.domains < 2 {
        return Err(Error::InvalidArgument("need at least 2 domains".into()));
    }
    if spec.grid_rows < 8 || spec.grid_cols < 8 {
        return Err(Error::InvalidArgument("grid must be at least 8x8".into()));
    }
    if spec.confounded_domains >= spec.domains {
        return Err(Error::InvalidArgument("confounded_domains must be below domains".into()));
    }
    let distinct = spec.domains - spec.confounded_domains;
    if distinct * spec.markers_per_domain > spec.genes {
        return Err(Error::InvalidArgument("not enough genes for the requested markers".into()));
    }
    let margin = 1.5 * spec.spacing;
    let row_h = spec.spacing * 3f64.sqrt() / 2.0;
    let mut pts = Vec::with_capacity(spec.grid_rows * spec.grid_cols);
    for r in 0..spec.grid_rows {
        for c in 0..spec.grid_cols {
            pts.push([margin + (c as f64 + 0.5 * (r % 2) as f64) * spec.spacing, margin + r as f64 * row_h]);
        }
    }
    let n = pts.len();
    let coords_f = Matrix::<f64>::from_rows(&pts);
    let (x0, x1) = (margin, margin + (spec.grid_cols as f64 - 0.5) * spec.spacing);
    let (y0, y1) = (margin, margin + (spec.grid_rows - 1) as f64 * row_h);

    let mut site_rng = rng.split(1);
    let mut labels = Vec::new();
    let min_size = n / (4 * spec.domains);
    for attempt in 0..1000 {
        let sites = (0..spec.domains)
            .map(|_| [x0 + site_rng.uniform() * (x1 - x0), y0 + site_rng.uniform() * (y1 - y0)])
            .collect::<Vec<_>>();
        labels = pts.iter().map(|&p| nearest_site(p, &sites)).collect::<Vec<usize>>();
        let sizes_ok = (0..spec.domains).all(|d| labels.iter().filter(|&&l| l == d).count() >= min_size.max(1));
        if sizes_ok && labels_contiguous(&coords_f, &labels, 6) {
            break;
        }
        if attempt == 999 {
            return Err(Error::InvalidArgument("could not place contiguous domains".into()));
        }
    }

    let marker_owner = |d: usize| if d >= distinct { distinct - 1 } else { d };
    let mut expr_rng = rng.split(2);
    let base: Vec<f64> = (0..spec.genes).map(|_| spec.base_rate * (0.5 + expr_rng.uniform())).collect();
    let mut counts = Matrix::<T>::zeros(n, spec.genes);
    let half_var = 0.5 * spec.noise * spec.noise;
    for i in 0..n {
        let owner = marker_owner(labels[i]);
        let lib = (0.2 * expr_rng.normal()).exp();
        for g in 0..spec.genes {
            let mut rate = base[g] * lib;
            if g / spec.markers_per_domain == owner && g < distinct * spec.markers_per_domain {
                rate *= spec.marker_fold;
            }
            if spec.noise > 0.0 {
                rate *= (spec.noise * expr_rng.normal() - half_var).exp();
            }
            counts[(i, g)] = T::lit(expr_rng.poisson(rate) as f64);
        }
    }

    let image = if spec.with_image {
        let mut img_rng = rng.split(3);
        let gamma = spec.scale_factor;
        let width = ((x1 + margin) * gamma).ceil() as usize;
        let height = ((y1 + margin) * gamma).ceil() as usize;
        let mean: [f64; 3] = std::array::from_fn(|c| {
            (0..spec.domains).map(|d| PALETTE[d % PALETTE.len()][c]).sum::<f64>() / spec.domains as f64
        });
        let pad = 0.6 * spec.spacing;
        let mut img = RgbImage::new(width, height);
        for py in 0..height {
            for px in 0..width {
                let p = [(px as f64 + 0.5) / gamma, (py as f64 + 0.5) / gamma];
                let inside = p[0] >= x0 - pad && p[0] <= x1 + pad && p[1] >= y0 - pad && p[1] <= y1 + pad;
                let color: [f64; 3] = if inside {
                    let d = labels[nearest_site(p, &pts)];
                    std::array::from_fn(|c| mean[c] + spec.image_signal * (PALETTE[d % PALETTE.len()][c] - mean[c]))
                } else {
                    BACKGROUND
                };
                let rgb = std::array::from_fn(|c| {
                    let noise = if inside { spec.pixel_noise * img_rng.normal() } else { 2.0 * img_rng.normal() };
                    (color[c] + noise).round().clamp(0.0, 255.0) as u8
                });
                img.set(px, py, rgb);
            }
        }
        Some(img)
    } else {
        None
    };

    let barcodes: Vec<String> = (0..n).map(|i| format!("spot{i:04}")).collect();
    let genes: Vec<String> = (0..spec.genes)
        .map(|g| {
            if g < distinct * spec.markers_per_domain {
                format!("marker{}_{}", g / spec.markers_per_domain, g % spec.markers_per_domain)
            } else {
                format!("gene{g:04}")
            }
        })
        .collect();
    Ok(Dataset {
        expression: ExpressionMatrix::new(counts, genes, barcodes),
        coords: coords_f.cast(),
        scale_factor: spec.scale_factor,
        labels: Some(labels.iter().map(|l| format!("domain{l}")).collect()),
        image,
        patch_embeddings: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label_ids(ds: &Dataset<f64>) -> Vec<usize> {
        ds.labels.as_ref().unwrap().iter().map(|l| l.trim_start_matches("domain").parse().unwrap()).collect()
    }

    #[test]
    fn default_grid_has_contiguous_domains() {
        let spec = SynthSpec { with_image: false, ..Default::default() };
        let ds: Dataset<f64> = generate_synthetic(&spec, &mut SeededRng::new(7)).unwrap();
        assert_eq!(ds.n_spots(), 256);
        let labels = label_ids(&ds);
        for d in 0..4 {
            assert!(labels.contains(&d));
        }
        assert!(labels_contiguous(&ds.coords, &labels, 6));
    }

    #[test]
    fn noiseless_domain_means_distinct() {
        let spec = SynthSpec { noise: 0.0, with_image: false, ..Default::default() };
        let ds: Dataset<f64> = generate_synthetic(&spec, &mut SeededRng::new(3)).unwrap();
        let labels = label_ids(&ds);
        let means: Vec<Vec<f64>> = (0..4)
            .map(|d| {
                let rows: Vec<usize> = (0..ds.n_spots()).filter(|&i| labels[i] == d).collect();
                ds.expression.values.select_rows(&rows).col_means()
            })
            .collect();
        for a in 0..4 {
            for b in a + 1..4 {
                assert_ne!(means[a], means[b]);
            }
        }
    }

    #[test]
    fn image_covers_scaled_spots() {
        let ds: Dataset<f64> = generate_synthetic(&SynthSpec::default(), &mut SeededRng::new(1)).unwrap();
        let img = ds.image.as_ref().unwrap();
        for i in 0..ds.n_spots() {
            assert!(ds.coords[(i, 0)] * ds.scale_factor < img.width as f64);
            assert!(ds.coords[(i, 1)] * ds.scale_factor < img.height as f64);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let mut rng = SeededRng::new(0);
        assert!(generate_synthetic::<f64>(&SynthSpec { domains: 1, ..Default::default() }, &mut rng).is_err());
        assert!(generate_synthetic::<f64>(&SynthSpec { grid_rows: 7, ..Default::default() }, &mut rng).is_err());
    }
}
