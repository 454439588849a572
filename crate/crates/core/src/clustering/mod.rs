//! Stage II deep embedded clustering and the final domain assignment
//! (mixture clustering followed by anchored spatial label diffusion).

pub mod dec;
pub mod refine;

pub use dec::{
    consistency_loss, loss_dec, nearest_rows, soft_assign, stage2_params, target_distribution, train_stage2,
    AssignmentState, Stage2Config, Stage2Objective, Stage2Result,
};
pub use refine::{agreement, find_anchors, gmm_cluster, one_hot, propagate_labels, DiffusionState};
