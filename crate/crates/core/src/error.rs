use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    Asymmetric { asymmetry: f64 },

    #[error("quadratic block is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NonConvex { min_eigenvalue: f64 },

    #[error("quadratic set is empty")]
    EmptySet,

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("sample design is rank deficient ({samples} samples for {coefficients} coefficients)")]
    RankDeficient { samples: usize, coefficients: usize },

    #[error("majorant fit failed on box {lower:?}..{upper:?}: {reason}")]
    FitFailed {
        lower: Vec<f64>,
        upper: Vec<f64>,
        reason: String,
    },

    #[error("disturbance gain matrix Q_eta + B'NB is singular (pivot {pivot:e})")]
    SingularGain { pivot: f64 },

    #[error("singular information matrix in reference filter")]
    SingularInformation,

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by bad input files or settings, as opposed to numerical failures.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => true,
            Error::InvalidModel(_) | Error::InvalidWindow(_) => true,
            _ => false,
        }
    }
}
