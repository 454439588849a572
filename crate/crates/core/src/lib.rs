//! Multimodal spatial-transcriptomics domain segmentation.
//!
//! The pipeline learns a spatially aware gene embedding with a masked graph
//! autoencoder regularized by a Fisher-kernel MMD, refines it with deep
//! embedded clustering, fuses it with stain-normalized histology features by
//! cross-attention, and assigns domains with a Gaussian mixture followed by
//! anchored label diffusion over the spot graph.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision the pipeline runs at.

pub mod clustering;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gene_encoder;
pub mod image_features;
pub mod numerics;
pub mod scalar;
pub mod spatial_graph;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Working precision of the end-to-end pipeline.
pub type Real = f64;
pub type Mat = numerics::Matrix<Real>;
pub type Mat32 = numerics::Matrix<f32>;
