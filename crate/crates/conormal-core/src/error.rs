//! Crate-wide error type.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("matrix is not square: {rows}x{cols}")]
    NonSquareMatrix { rows: usize, cols: usize },
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },
    #[error("grid size mismatch between operands")]
    SizeMismatch,
    #[error("normal-normal block `a` is singular at sample (t={t}, site={site})")]
    SingularNormalBlock { t: f64, site: usize },
    #[error("t-independent coefficient B0 is singular at site {site}")]
    SingularB0 { site: usize },
    #[error("empty grid")]
    EmptyGrid,
    #[error("accretivity failure: minimum Hermitian-part eigenvalue {kappa} <= 0")]
    NotAccretive { kappa: f64 },
    #[error("eigenvalue {val} too close to zero (spectral radius {radius}): operator not injective on H")]
    NullEigenvalue { val: f64, radius: f64 },
    #[error("sector violation: measured angle {omega} not strictly inside the bisector")]
    SectorViolation { omega: f64 },
    #[error("symbol {symbol} undefined at eigenvalue {lambda}")]
    SymbolUndefinedAtEigenvalue { symbol: &'static str, lambda: String },
    #[error("negative time {t} for semigroup application")]
    NegativeTime { t: f64 },
    #[error("boundary datum is not in the Hardy range: projection changed it by relative {rel}")]
    NotInHardyRange { rel: f64 },
    #[error("field slice {slice} is not in H (residual {rel})")]
    SliceNotInH { slice: usize, rel: f64 },
    #[error("unsupported weight exponent alpha = {alpha} (need |alpha| <= 1)")]
    UnsupportedAlpha { alpha: f64 },
    #[error("Neumann series diverged after {terms} terms (last increment {increment})")]
    SeriesDiverged { terms: usize, increment: f64 },
    #[error("nonzero mean mode with negative-order Sobolev norm requested")]
    NonzeroMeanNegativeOrder,
    #[error("configuration unsupported: {0}")]
    DimensionUnsupported(&'static str),
    #[error("grid too large for dense oracle: {size} (limit {limit})")]
    GridTooLarge { size: usize, limit: usize },
    #[error("dense system is singular")]
    SingularSystem,
    #[error("eigendecomposition failed: {0}")]
    EigenFailure(String),
    #[error("invalid grid parameter: {0}")]
    InvalidGrid(String),
    #[error("expression parse error: {0}")]
    ExprParse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed field container: {0}")]
    BadContainer(String),
}

pub type Result<T> = std::result::Result<T, Error>;
