use std::path::PathBuf;

/// Errors raised anywhere in the analysis pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed record at row {row}: {message}")]
    MalformedRecord { row: usize, message: String },

    #[error("data integrity: {0}")]
    DataIntegrity(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("design is collinear: column {column} ({name}) is linearly dependent on earlier columns")]
    Collinear { column: usize, name: String },

    #[error("calendar design is rank deficient; under-populated cells: {}", .cells.join(", "))]
    DetrendCells { cells: Vec<String> },

    #[error("interior-point solver did not converge after {iterations} iterations (primal {primal:.3e}, dual {dual:.3e}, gap {gap:.3e})")]
    SolverNonConvergence {
        iterations: usize,
        primal: f64,
        dual: f64,
        gap: f64,
    },

    #[error("bootstrap exhausted {draws} draws with only {accepted} full-rank replicates")]
    BootstrapExhausted { draws: usize, accepted: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's settings rather than by the data.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Parameter(_) | Error::Config(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
