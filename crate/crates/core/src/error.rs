use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("stencil at node {node:?} (level {level}) crosses the mask")]
    StencilCrossesMask { node: Vec<usize>, level: usize },
    #[error("stability bound violated: {0}")]
    Cfl(String),
    #[error("front exits the domain box: {0}")]
    FrontExit(String),
    #[error("solution blew up: {0}")]
    BlowUp(String),
    #[error("front extraction failed: {0}")]
    Front(String),
    #[error("region too small: {0}")]
    RegionTooSmall(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("schema version {found} does not match supported version {expected}; re-run the simulation with this build to regenerate the artifacts")]
    Schema { found: u32, expected: u32 },
    #[error("config: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
