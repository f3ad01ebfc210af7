use thiserror::Error;

/// Errors raised anywhere in the explanation toolkit.
#[derive(Debug, Error)]
pub enum ClimaxError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid training data: {0}")]
    InvalidTrainingData(String),

    #[error("dimension mismatch: expected {expected} columns, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("model unavailable: {0}")]
    ModelUnavailable(String),

    #[error("neighborhood contains a single class after exhausting the perturbation schedule")]
    SingleClassNeighborhood,

    #[error("mixture component {0} owns no rows after re-seeding")]
    DegenerateComponent(usize),

    #[error("singular linear system (use a ridge strength > 0)")]
    SingularSystem,

    #[error("Hessian is ill-conditioned (condition estimate {0:.3e}); increase the L2 strength")]
    IllConditioned(f64),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl ClimaxError {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            ClimaxError::Config(_) => 2,
            ClimaxError::InvalidTrainingData(_)
            | ClimaxError::Schema(_)
            | ClimaxError::InsufficientData(_)
            | ClimaxError::Io(_) => 3,
            ClimaxError::ModelUnavailable(_) | ClimaxError::Dimension { .. } => 4,
            ClimaxError::SingleClassNeighborhood
            | ClimaxError::DegenerateComponent(_)
            | ClimaxError::SingularSystem
            | ClimaxError::IllConditioned(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClimaxError>;
