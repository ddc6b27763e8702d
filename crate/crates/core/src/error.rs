use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HintError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },
    #[error("covariate error: {0}")]
    Covariate(String),
    #[error("singular design matrix: {0}")]
    SingularDesign(String),
    #[error("rank error: {0}")]
    Rank(String),
    #[error("convergence error: {0}")]
    Convergence(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("checksum mismatch for {0}")]
    Checksum(String),
    #[error("EM failed at iteration {iteration}: {source}")]
    Em {
        iteration: usize,
        #[source]
        source: Box<HintError>,
    },
}

/// Coarse classification used to map failures onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl HintError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HintError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            HintError::InvalidArgument(_) => ErrorClass::Usage,
            HintError::SingularDesign(_)
            | HintError::Rank(_)
            | HintError::Convergence(_)
            | HintError::Numerical(_) => ErrorClass::Numerical,
            HintError::Em { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }

    /// Short machine-readable tag for the error variant.
    pub fn tag(&self) -> &'static str {
        match self {
            HintError::Io { .. } => "io",
            HintError::Format(_) => "format",
            HintError::UnsupportedDatatype(_) => "unsupported-datatype",
            HintError::Geometry(_) => "geometry",
            HintError::Parse { .. } => "parse",
            HintError::Covariate(_) => "covariate",
            HintError::SingularDesign(_) => "singular-design",
            HintError::Rank(_) => "rank",
            HintError::Convergence(_) => "convergence",
            HintError::Numerical(_) => "numerical",
            HintError::Dimension(_) => "dimension",
            HintError::InvalidArgument(_) => "invalid-argument",
            HintError::Schema(_) => "schema",
            HintError::Checksum(_) => "checksum",
            HintError::Em { .. } => "em",
        }
    }
}

pub type Result<T, E = HintError> = std::result::Result<T, E>;
