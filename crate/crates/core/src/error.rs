use thiserror::Error;

/// Errors raised by estimators, solvers and data loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sample")]
    EmptySample,

    #[error("empty tail set at level {level}")]
    EmptyTail { level: f64 },

    #[error("quantile level must lie strictly inside (0, 1), got {0}")]
    InvalidLevel(f64),

    #[error("singular design")]
    SingularDesign,

    #[error("degenerate design: bread matrix is singular")]
    DegenerateDesign,

    #[error("non-finite input in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid knots for column {column}: {k1} must be below {k2} and inside the observed range")]
    InvalidKnots { column: usize, k1: f64, k2: f64 },

    #[error("empty bin {0}")]
    EmptyBin(usize),

    #[error("all weights are zero")]
    ZeroWeights,

    #[error("quantile fit failed at level {level}: {source}")]
    AtLevel {
        level: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("zero norm")]
    ZeroNorm,

    #[error("root not bracketed in ({lo}, {hi})")]
    NotBracketed { lo: f64, hi: f64 },

    #[error("csv error at row {row}, column '{column}': {message}")]
    Csv { row: usize, column: String, message: String },

    #[error("missing column '{0}'")]
    MissingColumn(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    CsvParse(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_level(self, level: f64) -> Error {
        Error::AtLevel { level, source: Box::new(self) }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
