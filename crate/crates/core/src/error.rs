use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("value {value} outside the range of psi ({range})")]
    OutOfRange { value: f64, range: String },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("lambda {value} for particle {index} is outside [0, 1]")]
    LambdaOutOfBounds { index: usize, value: f64 },

    #[error("lambda supplied for particle {0}, whose neighbouring gaps are not tied")]
    NotTied(usize),

    #[error("no lambda supplied for tied particle {0}")]
    MissingLambda(usize),

    #[error("minimal selection did not converge: {0}")]
    SelectionAmbiguous(String),

    #[error("step size underflow after {halvings} halvings at t = {t}: {reason}")]
    Stiffness {
        t: f64,
        halvings: u32,
        reason: String,
        positions: Vec<f64>,
    },

    #[error("tolerance not met: residual {residual:e} > {tolerance:e}")]
    ToleranceNotMet {
        residual: f64,
        tolerance: f64,
        best: Vec<f64>,
    },

    #[error("quadrature did not converge on [{a}, {b}] (estimate {estimate:e})")]
    Quadrature { a: f64, b: f64, estimate: f64 },

    #[error("density is not in the smooth set: {0}")]
    NotSmoothSet(String),

    #[error("finite-volume stability violated: {0}")]
    Stability(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the failure came from the numerics rather than from bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SelectionAmbiguous(_)
                | Error::Stiffness { .. }
                | Error::ToleranceNotMet { .. }
                | Error::Quadrature { .. }
                | Error::Stability(_)
        )
    }
}
