//! Evaluation and orchestration: clustering metrics, run configuration,
//! the end-to-end pipeline and its artifacts.

pub mod config;
pub mod keyvalue;
pub mod metrics;
pub mod pipeline;
pub mod plot;

pub use config::{EncoderChoice, RefineConfig, RunConfig};
pub use metrics::{metric_ami, metric_ari, metric_completeness, Contingency, MetricsReport};
pub use pipeline::{assign, prepare, run_pipeline, train, Assignment, Prepared, RunOutput, Trained};
pub use plot::scatter_svg;
