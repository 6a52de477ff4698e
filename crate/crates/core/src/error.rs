use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the thermal pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-uniform spacing at row {row}: expected step {expected}, found {found}")]
    NonUniformSpacing { row: usize, expected: f64, found: f64 },

    #[error("non-numeric cell at row {row}, column `{column}`: {value:?}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("too few rows: need at least 2, got {0}")]
    TooFewRows(usize),

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Δt = {dt} s exceeds τ_min/2 = {limit} s")]
    Stability { dt: f64, limit: f64 },

    #[error("degenerate range: {0}")]
    DegenerateRange(String),

    #[error("time step mismatch: series dt = {series} s, parameter dt = {params} s")]
    DtMismatch { series: f64, params: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training diverged: {0}")]
    Diverged(Box<crate::pinn::DivergenceReport>),

    #[error("unknown manufactured solution id {0}")]
    UnknownTarget(u32),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("grid outside the unit square: {0}")]
    GridOutOfDomain(String),

    #[error("zero reference norm")]
    ZeroReference,

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// True for failures caused by the numerics rather than by the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::Diverged(_))
    }
}
