use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report. Variants map onto the CLI exit codes
/// through [`Error::category`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("data contains non-finite values")]
    NonFinite,
    #[error("too few points: need at least {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("too few spots for k={k}: got {n}")]
    TooFewSpots { n: usize, k: usize },
    #[error("mixture component {0} collapsed (responsibility mass below 1e-12)")]
    DegenerateCluster(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("barcode mismatch: {0}")]
    BarcodeMismatch(String),
    #[error("malformed row in {file} at line {line}: {reason}")]
    MalformedRow { file: String, line: usize, reason: String },
    #[error("no genes survive filtering")]
    EmptyResult,
    #[error("all neighbor distances are zero; kernel bandwidth undefined")]
    ZeroBandwidth,
    #[error("sample too small for MMD: need at least 2 per side, got ({0}, {1})")]
    SampleTooSmall(usize, usize),
    #[error("loss diverged at epoch {epoch} in {stage}")]
    DivergedLoss { stage: &'static str, epoch: usize },
    #[error("spot center ({x:.1}, {y:.1}) lies outside the {width}x{height} image")]
    CenterOutsideImage { x: f64, y: f64, width: usize, height: usize },
    #[error("only {got} qualified patches for {needed} clusters")]
    TooFewQualifiedPatches { needed: usize, got: usize },
    #[error("degenerate stain statistics in channel {0}")]
    DegenerateStats(usize),
    #[error("no tissue pixels found")]
    NoForeground,
    #[error("embedding shape mismatch: {0}")]
    EmbeddingShapeMismatch(String),
    #[error("missing embedding file {}", .0.display())]
    MissingEmbeddingFile(PathBuf),
    #[error("row misalignment: {0} gene rows vs {1} image rows")]
    RowMisalignment(usize, usize),
    #[error("similarity distribution needs at least two rows")]
    SingleRow,
    #[error("generated sample set is empty")]
    EmptyGenerated,
    #[error("cluster {cluster} collapsed for 3 consecutive target refreshes")]
    ClusterCollapse { cluster: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error: {0}")]
    Image(String),
}

/// Coarse failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => Category::Config,
            Error::NonFinite
            | Error::DegenerateCluster(_)
            | Error::DivergedLoss { .. }
            | Error::ClusterCollapse { .. }
            | Error::ZeroBandwidth
            | Error::DegenerateStats(_) => Category::Numerical,
            Error::Stage { source, .. } => source.category(),
            _ => Category::Data,
        }
    }

    /// Wraps an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage { stage, source: Box::new(self) }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
