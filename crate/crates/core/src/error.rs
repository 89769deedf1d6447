use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("layout mismatch: expected {expected:?}, found {found:?}")]
    LayoutMismatch {
        expected: alloc::vec::Vec<usize>,
        found: alloc::vec::Vec<usize>,
    },

    #[error("steady state is not unique (null-space dimension estimate {nullity})")]
    MultipleSteadyStates { nullity: usize },

    #[error("linear solver did not converge: {0}")]
    NoConvergence(String),

    #[error("step size underflow at t = {time} (problem too stiff for the explicit integrator)")]
    StepSizeUnderflow { time: f64 },

    #[error("no threshold crossing before the horizon t = {horizon} (last value {last_value})")]
    Horizon { horizon: f64, last_value: f64 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

impl Error {
    /// Wraps the error with a description of where it happened.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: alloc::boxed::Box::new(self),
        }
    }

    /// Innermost error, with all context layers stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}
