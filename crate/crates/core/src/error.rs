use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or configuration value is outside its valid range.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("signal too short: {len} samples, need at least {need}")]
    TooShort { len: usize, need: usize },

    #[error("matrix is not Hermitian (max entrywise defect {0:e})")]
    NotHermitian(f64),

    /// Raised by the matrix-power routines when loading did not lift the
    /// smallest eigenvalue above zero.
    #[error("matrix not positive definite after loading (bin {bin}, smallest eigenvalue {eigenvalue:e})")]
    NotPositiveDefinite { bin: usize, eigenvalue: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("malformed tensor file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the error stems from user-supplied configuration rather than
    /// a failure during computation or I/O.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::InvalidInput(_))
    }
}
