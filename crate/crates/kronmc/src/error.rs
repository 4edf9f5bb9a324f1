use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid bound: {0}")]
    InvalidBound(String),

    #[error("empty candidate set")]
    EmptyCandidateSet,

    #[error("rank {requested} exceeds min dimension {limit}")]
    RankTooLarge { requested: usize, limit: usize },

    /// The rearranged mask has a fully unobserved row or column, so the
    /// corresponding entries cannot be recovered under this configuration.
    #[error("irrecoverable: empty rearranged rows {empty_rows:?}, empty rearranged columns {empty_cols:?}")]
    Irrecoverable {
        empty_rows: Vec<usize>,
        empty_cols: Vec<usize>,
    },

    #[error("underdetermined row {index}: only {observed} observed entries")]
    UnderdeterminedRow { index: usize, observed: usize },

    #[error("diverged: residual {residual:.3e} exceeded cap {cap:.3e}")]
    Diverged { residual: f64, cap: f64 },

    #[error("empty observation mask")]
    EmptyMask,

    #[error("shrink not allowed: target {0}x{1} smaller than current {2}x{3}")]
    ShrinkNotAllowed(usize, usize, usize, usize),

    #[error("invalid gap parameter {0}: must lie in (0, 1)")]
    InvalidGap(f64),

    #[error("term configuration ({0}, {1}) out of range for log2-dims ({2}, {3})")]
    ConfigOutOfRange(u32, u32, u32, u32),

    #[error("cross-validation fold {index} failed: {source}")]
    FoldFailed {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at {path}:{position}: {msg}")]
    Parse {
        path: String,
        position: usize,
        msg: String,
    },

    #[error("duplicate mask index ({0}, {1})")]
    DuplicateIndex(usize, usize),

    #[error("index ({0}, {1}) out of bounds for {2}x{3}")]
    OutOfBounds(usize, usize, usize, usize),

    #[error("unsupported PGM maxval {0} (expected 255 or 65535)")]
    UnsupportedMaxval(u32),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
