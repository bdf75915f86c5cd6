use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("inverted element{}: det(F) = {det:e}", fmt_particle(*.particle))]
    InvertedElement { particle: Option<usize>, det: f64 },

    #[error("simulation diverged at substep {substep}")]
    Divergence { substep: u64 },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no alignable frames: {0}")]
    Alignment(String),

    #[error("estimation failed: {0}")]
    EstimationFailed(String),

    #[error("evaluation failed: {0}")]
    EvaluationFailed(String),

    #[error("demonstration rejected: {0}")]
    DemoRejected(String),

    #[error("corrupt model: {0}")]
    CorruptModel(String),

    #[error("training produced a non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn fmt_particle(p: Option<usize>) -> String {
    p.map(|i| format!(" at particle {i}")).unwrap_or_default()
}

/// Coarse classification used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Numeric,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Domain(_) | Error::Geometry(_) | Error::Config(_) | Error::ShapeMismatch(_) => {
                ErrorClass::Usage
            }
            Error::InvertedElement { .. }
            | Error::Divergence { .. }
            | Error::EstimationFailed(_)
            | Error::EvaluationFailed(_)
            | Error::DemoRejected(_)
            | Error::NonFiniteLoss { .. }
            | Error::Alignment(_) => ErrorClass::Numeric,
            Error::EmptyCloud | Error::CorruptModel(_) | Error::Parse { .. } | Error::Io(_) => {
                ErrorClass::Io
            }
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse { line: e.line(), msg: e.to_string() }
    }
}
