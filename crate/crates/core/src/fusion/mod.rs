//! Stage III: projection of gene latents and image embeddings into a shared
//! space, bidirectional cross-attention with residuals, weighted fusion and
//! the alignment objective that trains it.

pub mod losses;
pub mod model;
pub mod train;

pub use losses::{loss_contrastive, loss_reg, loss_sdm, similarity_distribution};
pub use model::{cross_attend, fuse, gene_attention_maps, Direction, FusedEmbedding, FusionParams};
pub use train::{train_stage3, GeneInput, Stage3Config, Stage3Objective, Stage3Result};
