use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("OD pair ({origin}, {destination}) has no route")]
    NoRoute { origin: u32, destination: u32 },

    #[error("unknown link id {0}")]
    UnknownLink(u32),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("negative volume {0} on link")]
    NegativeVolume(f64),

    #[error("matrix is not positive semi-definite (min eigenvalue estimate {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("cost history has no entry for day {0}")]
    MissingCost(i64),

    #[error("at t = {t}: {source}")]
    AtTime {
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("at iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Format { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn at_time(self, t: usize) -> Self {
        Error::AtTime {
            t,
            source: Box::new(self),
        }
    }

    pub fn at_iteration(self, iteration: usize) -> Self {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }

    /// True for failures of the numerical pipeline, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NotPsd { .. } => true,
            Error::AtTime { source, .. } | Error::AtIteration { source, .. } => {
                source.is_numerical()
            }
            _ => false,
        }
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}
