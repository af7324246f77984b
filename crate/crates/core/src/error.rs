use thiserror::Error;

/// Failures surfaced by the simulation, analysis and oracle layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("state is not normalized (norm^2 = {norm_sqr:.3e})")]
    NotNormalized { norm_sqr: f64 },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("eigensolver did not converge for a {dim}x{dim} matrix")]
    EigenSolver { dim: usize },

    #[error("quadrature failed to converge: estimated error {estimate:.3e} exceeds {tolerance:.1e}")]
    Quadrature { estimate: f64, tolerance: f64 },

    #[error("degenerate packet: {0}")]
    DegeneratePacket(String),

    #[error("degenerate decode: state has no weight in the decoding region")]
    DegenerateDecode,

    #[error("planning failed: {0}")]
    Planning(String),

    #[error("search failed: {0}")]
    Search(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("truncation violated: {leaked:.3e} amplitude left the {m_max}-particle sector")]
    Truncation { leaked: f64, m_max: usize },
}

pub type Result<T> = std::result::Result<T, WireError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(WireError::InvalidArgument(msg.into()))
}
