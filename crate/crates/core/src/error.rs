use num_complex::Complex64;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration key violates its invariant.
    #[error("invalid config key `{key}`: {message}")]
    InvalidConfig { key: String, message: String },

    #[error("could not parse config: {0}")]
    Parse(String),

    /// Quadrature refinement budget exhausted.
    #[error("quadrature for {key} did not converge: best estimate {estimate}, error bound {error:e}")]
    Quadrature {
        key: String,
        estimate: Complex64,
        error: f64,
    },

    /// Doubling the mode cutoff still moved the state by more than the tolerance.
    #[error("mode sum not converged at {modes} modes: last change {delta:e}")]
    ModeConvergence { modes: usize, delta: f64 },

    #[error("exact evolution failed: {0}")]
    Oracle(String),

    #[error("angle undefined: {0}")]
    UndefinedAngle(&'static str),

    #[error("sweep failed: {0}")]
    Sweep(String),

    #[error("unsupported operator word: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Numerical failures (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Quadrature { .. }
                | Error::ModeConvergence { .. }
                | Error::Oracle(_)
                | Error::Sweep(_)
        )
    }
}
