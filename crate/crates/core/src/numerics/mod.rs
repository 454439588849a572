//! Deterministic numerical substrate: dense matrices, seeded randomness,
//! reverse-mode gradients, clustering primitives, PCA and gradient checking.

pub mod gmm;
pub mod gradcheck;
pub mod kmeans;
pub mod matrix;
pub mod params;
pub mod pca;
pub mod rng;
pub mod tape;

pub use gmm::{argmax, gmm_em_fit, GmmModel};
pub use gradcheck::{gradient_check, GradCheckReport, Objective};
pub use kmeans::{kmeans_fit, KMeansFit};
pub use matrix::Matrix;
pub use params::{Adam, AdamConfig, ParamSet};
pub use pca::{pca_fit_transform, Pca};
pub use rng::{RngState, SeededRng};
pub use tape::{Tape, Var};
