use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Parameters outside the admissible region (non-positive variance,
    /// non-positive-definite covariance, non-finite inputs, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("moment order {requested} exceeds the supported maximum {max}")]
    UnsupportedOrder { requested: u32, max: u32 },

    #[error("quadrature did not reach tolerance {tol:e}; achieved error estimate {achieved:e}")]
    Convergence { tol: f64, achieved: f64 },

    #[error("only {accepted} of {draws} draws landed in the positive quadrant (rate {rate:.3e})")]
    InsufficientAcceptance { accepted: usize, draws: usize, rate: f64 },

    #[error("invalid configuration: field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("operation not supported for {0} sampling")]
    UnsupportedMode(String),

    #[error("no qualifying observations: {0}")]
    EmptySystem(String),

    #[error("parameters not identified: {0}")]
    Identification(String),

    #[error("insufficient observations: {rows} rows for {params} parameters")]
    InsufficientObservations { rows: usize, params: usize },

    #[error("bracket [{lo}, {hi}] does not contain a minimizer")]
    Bracket { lo: f64, hi: f64 },

    #[error("J test not applicable: {0}")]
    NotApplicable(String),

    #[error("{failed} of {total} replications failed at sample size {sample_size}: {reason}")]
    TooManyFailures {
        sample_size: usize,
        failed: usize,
        total: usize,
        reason: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Short machine-readable tag, used by the CLI and the C ABI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::UnsupportedOrder { .. } => "unsupported_order",
            Error::Convergence { .. } => "convergence",
            Error::InsufficientAcceptance { .. } => "insufficient_acceptance",
            Error::Config { .. } => "config",
            Error::UnsupportedMode(_) => "unsupported_mode",
            Error::EmptySystem(_) => "empty_system",
            Error::Identification(_) => "identification",
            Error::InsufficientObservations { .. } => "insufficient_observations",
            Error::Bracket { .. } => "bracket",
            Error::NotApplicable(_) => "not_applicable",
            Error::TooManyFailures { .. } => "too_many_failures",
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
        }
    }
}
