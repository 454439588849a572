//! Histology features: patches around each spot, quality-scored reference
//! selection, stain normalization, patch embedding and spatial smoothing.

pub mod encode;
pub mod patches;
pub mod stain;

pub use encode::{encode_patches, smooth_embeddings, toy_features, PatchEmbeddingSet, PatchEncoder, TOY_WIDTH};
pub use patches::{
    extract_patches, is_foreground, luminance, reflect_index, score_patches, select_target_patches, Patch, ScoreComponents, TargetSelection,
};
pub use stain::{stain_normalize, StainStats};

use serde::{Deserialize, Serialize};

use crate::dataio::RgbImage;
use crate::error::Result;
use crate::numerics::{Matrix, SeededRng};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageConfig {
    pub target_clusters: usize,
    pub top_fraction: f64,
    pub smoothing: f64,
    pub k: usize,
    pub normalize_stain: bool,
}

impl Default for ImageConfig {
    fn default() -> Self {
        Self {
            target_clusters: patches::DEFAULT_TARGET_CLUSTERS,
            top_fraction: patches::DEFAULT_TOP_FRACTION,
            smoothing: encode::DEFAULT_SMOOTHING,
            k: crate::spatial_graph::DEFAULT_K,
            normalize_stain: true,
        }
    }
}

pub struct ImageFeatures<T> {
    pub embeddings: PatchEmbeddingSet<T>,
    /// Present when stain normalization ran.
    pub normalized_image: Option<RgbImage>,
    pub targets: Option<TargetSelection>,
}

/// Full histology branch. With a precomputed encoder the image is not
/// needed; otherwise patches are cut from `image`, normalized against
/// reference patches and featurized.
pub fn image_pipeline<T: Scalar>(
    image: Option<&RgbImage>,
    coords: &Matrix<T>,
    gamma: f64,
    encoder: &PatchEncoder,
    config: &ImageConfig,
    rng: &mut SeededRng,
) -> Result<ImageFeatures<T>> {
    let (raw, normalized_image, targets) = match (encoder, image) {
        (PatchEncoder::Precomputed(m), _) => {
            if m.rows() != coords.rows() {
                return Err(crate::error::Error::EmbeddingShapeMismatch(format!(
                    "{} embedding rows for {} spots",
                    m.rows(),
                    coords.rows()
                )));
            }
            (m.cast(), None, None)
        }
        (PatchEncoder::Toy, None) => {
            return Err(crate::error::Error::InvalidArgument("toy featurizer needs an image".into()));
        }
        (PatchEncoder::Toy, Some(img)) => {
            let (img, normalized, targets) = if config.normalize_stain {
                let first = extract_patches(img, coords, gamma)?;
                let scores = score_patches(&first);
                let sel = select_target_patches(&first, &scores, config.target_clusters, config.top_fraction, rng)?;
                let raw_stats = StainStats::foreground(img)?;
                let norm = stain_normalize(img, &raw_stats, &sel.stats)?;
                (norm.clone(), Some(norm), Some(sel))
            } else {
                (img.clone(), None, None)
            };
            let patches = extract_patches(&img, coords, gamma)?;
            (encode_patches(&patches, encoder)?, normalized, targets)
        }
    };
    let smoothed = smooth_embeddings(&raw, coords, config.k, config.smoothing)?;
    Ok(ImageFeatures {
        embeddings: PatchEmbeddingSet { raw, smoothed, encoder_id: encoder.id().to_string() },
        normalized_image,
        targets,
    })
}
