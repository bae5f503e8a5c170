use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate homography at plane {plane}: homogeneous scale {scale:e}")]
    DegenerateWarp { plane: usize, scale: f64 },

    #[error("invalid depth bounds: near={near}, far={far}")]
    InvalidBounds { near: f64, far: f64 },

    #[error("all camera origins coincide with the target origin")]
    AllCoincident,

    #[error("consistency losses need at least two views, got {0}")]
    TooFewViews(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: u64,
        detail: String,
    },

    #[error("enumeration budget exceeded: {visited} nodes > {budget}")]
    BudgetExceeded { visited: u64, budget: u64 },

    #[error("missing file: {}", .0.display())]
    MissingManifest(PathBuf),

    #[error("bad pose for view `{view}` in {}: {field}", .file.display())]
    BadPose {
        file: PathBuf,
        view: String,
        field: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file {}: {reason}", .path.display())]
    Format { path: PathBuf, reason: String },

    #[error("pixel ({x}, {y}): {source}")]
    AtPixel {
        x: usize,
        y: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable tag used in CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateWarp { .. } => "DegenerateWarp",
            Error::InvalidBounds { .. } => "InvalidBounds",
            Error::AllCoincident => "AllCoincident",
            Error::TooFewViews(_) => "TooFewViews",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::BudgetExceeded { .. } => "BudgetExceeded",
            Error::MissingManifest(_) => "MissingManifest",
            Error::BadPose { .. } => "BadPose",
            Error::Config(_) => "Config",
            Error::Format { .. } => "Format",
            Error::AtPixel { source, .. } => source.kind(),
            Error::Io(_) => "Io",
            Error::Image(_) => "Image",
            Error::Json(_) => "Json",
        }
    }
}
