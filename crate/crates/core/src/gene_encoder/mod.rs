//! Stage I representation learning: a masked dual-branch (MLP and GCN)
//! graph autoencoder with expression and adjacency decoders, trained jointly
//! with a GAN whose generator also defines the Fisher kernel used to align
//! real and generated latents.

pub mod losses;
pub mod model;
pub mod train;

pub use losses::{
    fisher_features, fisher_kernel, fisher_mmd, loss_graph, loss_mask, loss_reconstruction, mmd_unbiased, moment_kl,
};
pub use model::{
    apply_additive_mask, decode_adjacency, decode_expression, encode, EncoderDims, EncoderParams, GanParams, MaskState,
    Mode,
};
pub use train::{init_stage1, joint_params, train_stage1, Stage1Config, Stage1Objective, Stage1Result};
