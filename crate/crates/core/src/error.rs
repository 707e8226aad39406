use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: column `{column}` has non-numeric value `{value}`")]
    NonNumeric { row: usize, column: String, value: String },

    #[error("row {row}: column `{column}` is not finite")]
    NonFinite { row: usize, column: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("column length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch { what: String, got: usize, expected: usize },

    #[error("stratum {label} has {rows} row(s); at least 2 are required")]
    SparseStratum { label: String, rows: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate {0}: zero or near-zero spread")]
    Degenerate(String),

    #[error("hex cells at different resolutions ({0} vs {1})")]
    ResolutionMismatch(u8, u8),

    #[error("cells ({0},{1}) and ({2},{3}) are not adjacent")]
    NotAdjacent(i32, i32, i32, i32),

    #[error("non-finite value in {0}")]
    NumericalFailure(String),

    #[error("hessian solve failed even with ridge {ridge:e}")]
    HessianSolve { ridge: f64 },

    #[error("{learner} fit did not converge after {iterations} iterations")]
    NoConvergence { learner: &'static str, iterations: usize },

    #[error("{0}")]
    Metric(String),
}

pub type Result<T> = std::result::Result<T, Error>;
