//! Dataset ingestion, preprocessing, synthetic data and file formats.

pub mod checkpoint;
pub mod dataset;
pub mod formats;
pub mod preprocess;
pub mod synth;

pub use checkpoint::Checkpoint;
pub use dataset::{load_dataset, write_dataset, Dataset, ExpressionMatrix};
pub use formats::{read_embeddings, write_embeddings, RgbImage};
pub use preprocess::{preprocess, replay, PipelineStep, PreprocessConfig, PreprocessedMatrix};
pub use synth::{generate_synthetic, SynthSpec};
