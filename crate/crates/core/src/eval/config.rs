//! Run configuration, read from and written to flat `key=value` files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::dec::Stage2Config;
use crate::clustering::refine::{DEFAULT_ANCHOR_FRACTION, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::dataio::formats::parse_key_values;
use crate::dataio::PreprocessConfig;
use crate::error::{Error, Result};
use crate::fusion::Stage3Config;
use crate::gene_encoder::Stage1Config;
use crate::image_features::ImageConfig;

use super::keyvalue::{to_entries, with_overrides};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderChoice {
    /// Deterministic color/texture featurizer computed from image.png.
    Toy,
    /// Rows of patch_embeddings.bin.
    Precomputed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub anchor_fraction: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { anchor_fraction: DEFAULT_ANCHOR_FRACTION, max_iter: DEFAULT_MAX_ITER, tol: DEFAULT_TOL }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: String,
    pub out: String,
    pub seed: u64,
    pub clusters: usize,
    /// Neighbors per spot in the spatial graph.
    pub k: usize,
    pub encoder: EncoderChoice,
    /// Run the histology branch and Stage III. When off, the refined gene
    /// embedding is clustered directly.
    pub use_image: bool,
    pub preprocess: PreprocessConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub image: ImageConfig,
    pub stage3: Stage3Config,
    pub refine: RefineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: String::new(),
            out: "out".into(),
            seed: 0,
            clusters: 7,
            k: crate::spatial_graph::DEFAULT_K,
            encoder: EncoderChoice::Toy,
            use_image: true,
            preprocess: PreprocessConfig::default(),
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            image: ImageConfig::default(),
            stage3: Stage3Config::default(),
            refine: RefineConfig::default(),
        }
    }
}

impl RunConfig {
    /// Every key of the flat format with its default rendering.
    pub fn default_entries() -> Vec<(String, String)> {
        Self::default().to_entries()
    }

    pub fn to_entries(&self) -> Vec<(String, String)> {
        to_entries(self)
    }

    pub fn to_key_values(&self) -> String {
        self.to_entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Applies overrides on top of `self`. Later entries win.
    pub fn with_overrides<K: AsRef<str>, V: AsRef<str>>(&self, entries: &[(K, V)]) -> Result<Self> {
        let cfg = with_overrides(self, entries)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_key_values(text: &str, file: &str) -> Result<Self> {
        let entries = parse_key_values(text, file).map_err(|e| Error::Config(e.to_string()))?;
        Self::default().with_overrides(&entries)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_key_values(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.clusters < 2 {
            return fail(format!("clusters must be at least 2, got {}", self.clusters));
        }
        if self.k == 0 {
            return fail("k must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.stage3.alpha) {
            return fail(format!("stage3.alpha must lie in [0, 1], got {}", self.stage3.alpha));
        }
        if self.stage3.tau <= 0.0 {
            return fail(format!("stage3.tau must be positive, got {}", self.stage3.tau));
        }
        if !(0.0..1.0).contains(&self.stage1.mask_ratio) {
            return fail(format!("stage1.mask_ratio must lie in [0, 1), got {}", self.stage1.mask_ratio));
        }
        if !(0.0..=1.0).contains(&self.image.smoothing) {
            return fail(format!("image.smoothing must lie in [0, 1], got {}", self.image.smoothing));
        }
        if !(self.refine.anchor_fraction > 0.0 && self.refine.anchor_fraction <= 1.0) {
            return fail(format!("refine.anchor_fraction must lie in (0, 1], got {}", self.refine.anchor_fraction));
        }
        for (name, lr) in [("stage1.lr", self.stage1.lr), ("stage2.lr", self.stage2.lr), ("stage3.lr", self.stage3.lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return fail(format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_values_round_trip() {
        let cfg = RunConfig::default()
            .with_overrides(&[("stage1.epochs", "12"), ("stage3.direction", "image_to_gene"), ("use_image", "false")])
            .unwrap();
        assert_eq!(cfg.stage1.epochs, 12);
        assert!(!cfg.use_image);
        let back = RunConfig::from_key_values(&cfg.to_key_values(), "t").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_and_mistyped_keys_fail() {
        assert!(RunConfig::from_key_values("stage1.epoch=3\n", "t").is_err());
        assert!(RunConfig::from_key_values("seed=-1\n", "t").is_err());
        assert!(RunConfig::from_key_values("stage3.direction=sideways\n", "t").is_err());
    }
}
