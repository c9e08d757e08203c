use thiserror::Error;

/// Errors produced by the identification toolkit.
#[derive(Debug, Error)]
pub enum TopoError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("time {t} outside [{start}, {end})")]
    Range { t: f64, start: f64, end: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("matrix is singular: {0}")]
    Singular(String),

    #[error("excitation config: {0}")]
    Config(String),

    #[error("state diverged in interval {interval} at t = {t}")]
    Divergence { interval: usize, t: f64 },

    #[error("segments in one aggregation must share a vertex set: {0}")]
    Grouping(String),

    #[error("no mode count configured for vertex set {0:?}")]
    MissingModeCount(Vec<u32>),

    #[error("cluster count {requested} outside 1..={available}")]
    ClusterCount { requested: usize, available: usize },

    #[error("label index sets differ: {0}")]
    IndexMismatch(String),

    #[error("invalid scenario: {0}")]
    Validation(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("schema error at `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TopoError> = std::result::Result<T, E>;
