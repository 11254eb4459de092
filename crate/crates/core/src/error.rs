use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid shape: {rows}x{cols} with {len} entries")]
    InvalidShape { rows: usize, cols: usize, len: usize },

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("matrix dimension {dim} exceeds svd_max_dim {max}")]
    DimensionTooLarge { dim: usize, max: usize },

    #[error("operation requires a nonzero matrix")]
    ZeroMatrix,

    #[error("iteration did not converge after {iterations} steps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("degenerate spectrum: sigma1 = {sigma1}, sigma2 = {sigma2}")]
    DegenerateSpectrum { sigma1: f64, sigma2: f64 },

    #[error("threshold must be positive, got {0}")]
    NonPositiveThreshold(f64),

    #[error("empty matrix")]
    EmptyMatrix,

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("rank {rank} exceeds min(m, n) = {max}")]
    RankTooLarge { rank: usize, max: usize },

    #[error("noise matrix is zero")]
    ZeroNoise,

    #[error("vector is not unit norm (norm = {0})")]
    NonUnitVector(f64),

    #[error("projection onto the singular direction pair vanishes")]
    DegenerateProjection,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("quadrature failed: {0}")]
    QuadratureFailure(String),

    #[error("invalid constants: {0}")]
    InvalidConstants(String),

    #[error("threshold {tau} does not exceed the gradient bound {bound}")]
    ThresholdBelowB { tau: f64, bound: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
