use thiserror::Error;

/// Which side of an integration range failed to converge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tail {
    Lower,
    Upper,
}

impl std::fmt::Display for Tail {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tail::Lower => write!(f, "lower tail"),
            Tail::Upper => write!(f, "upper tail"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported parameter: {0}")]
    Unsupported(String),

    #[error("integral diverges in the {tail}: {detail}")]
    Divergence { tail: Tail, detail: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no sign change found: {detail}")]
    NoRoot { detail: String },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// Failure of one point of a sweep or batch, tagged with its parameter.
    #[error("at {parameter} = {value}: {source}")]
    At {
        parameter: String,
        value: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("simulation unstable at t={time:.4} (|x| = {value:.3e}); try a smaller dt")]
    Instability { time: f64, value: f64 },
}

impl Error {
    /// Precondition-type failures (bad inputs, failed audits) as opposed to
    /// numerical breakdowns. The CLI maps these to different exit codes.
    pub fn is_precondition(&self) -> bool {
        if let Error::At { source, .. } = self {
            return source.is_precondition();
        }
        matches!(
            self,
            Error::Domain(_)
                | Error::InvalidParameter(_)
                | Error::Unsupported(_)
                | Error::Precondition(_)
                | Error::Parse { .. }
        )
    }

    pub fn at(self, parameter: &str, value: f64) -> Self {
        Error::At {
            parameter: parameter.to_string(),
            value,
            source: Box::new(self),
        }
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
