use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unparsable font {path}: {reason}")]
    UnparsableFont { path: PathBuf, reason: String },

    #[error("glyph {ch:?} is missing or renders empty in {font}")]
    MissingGlyph { font: String, ch: char },

    #[error("split {split:?} has {usable} usable font(s); at least 2 are required")]
    EmptySplit { split: String, usable: usize },

    #[error("need at least 2 fonts, got {0}")]
    InsufficientFonts(usize),

    #[error("font id {0} has no average style feature")]
    UnknownFont(usize),

    #[error("class id {0} has no average content feature")]
    UnknownClass(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    #[error("{term} became non-finite at epoch {epoch}, step {step}")]
    DivergedLoss { term: String, epoch: usize, step: usize },

    #[error("average feature table is missing or incomplete: {0}")]
    MissingAverages(String),

    #[error("all input vectors are identical")]
    DegenerateInput,

    #[error("no data to plot")]
    NoData,

    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("style glyph and content source are the same font ({0})")]
    SameFont(usize),

    #[error("feature table lacks content rows for font {font}, class {class}")]
    MissingContentRows { font: usize, class: usize },

    #[error("empty point set")]
    EmptyPointSet,

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::CorruptFile {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Whether the failure stems from user input (bad files, arguments or
    /// data) rather than a defect or numerical breakdown.
    pub fn is_user_error(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_user_error(),
            Error::DivergedLoss { .. } | Error::ShapeMismatch(_) => false,
            _ => true,
        }
    }
}
