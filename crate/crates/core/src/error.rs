use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("covariate {x} lies outside the domain [{lo}, {hi}]")]
    Domain { x: f64, lo: f64, hi: f64 },

    #[error("model singularity at x = {x}: denominator vanishes")]
    Singularity { x: f64 },

    #[error("parameter vector has length {actual}, model expects {expected}")]
    Dimension { expected: usize, actual: usize },

    #[error("invalid model specification: {0}")]
    InvalidModel(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("singular information matrix (eigenvalue ratio {ratio:e}); need at least as many dose levels as parameters")]
    SingularInformation { ratio: f64 },

    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("quadrature did not converge on [{a}, {b}]")]
    Quadrature { a: f64, b: f64 },

    #[error("constrained fit failed: |d1 - eps| = {violation:e} exceeds tolerance {tolerance:e}")]
    ConstrainedFit { violation: f64, tolerance: f64 },

    #[error("least-squares fit did not converge: {0}")]
    FitFailed(String),

    #[error("{dropped} of {total} bootstrap replicates failed to refit (limit 10%)")]
    TooManyDropped { dropped: usize, total: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    /// True for errors caused by the inputs rather than by a statistical procedure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Domain { .. }
                | Error::Dimension { .. }
                | Error::InvalidModel(_)
                | Error::Parse { .. }
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Config(_)
        )
    }
}
