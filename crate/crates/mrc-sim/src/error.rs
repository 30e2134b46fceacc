//! Error taxonomy and process exit codes.
//!
//! Every failure mode maps to one of a small set of exit codes so scripts can
//! distinguish bad inputs from numerical breakdown from a failed `--check`.

use thiserror::Error;

/// Process exit code for configuration, validation, and domain errors.
pub const EXIT_CONFIG: i32 = 2;
/// Process exit code for numerical failures (NaN, non-convergence, calibration).
pub const EXIT_NUMERICAL: i32 = 3;
/// Process exit code for a failed `--check` assertion.
pub const EXIT_CHECK: i32 = 4;
/// Process exit code for I/O and file-format errors.
pub const EXIT_IO: i32 = 5;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad or missing configuration input (named key, bad value, missing file path setup).
    #[error("configuration error: {0}")]
    Config(String),

    /// A constructor or operation precondition was violated.
    #[error("validation error: {0}")]
    Validation(String),

    /// An argument fell outside an operation's documented domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Numerical breakdown: NaN/Inf in the field, non-convergence, step-size violation.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A measurement could not be formed from the data (e.g. phase plateaus unavailable).
    #[error("measurement error: {0}")]
    Measurement(String),

    /// Calibration verification failed; carries the measured phase step in rad.
    #[error("calibration error: verification run measured a step of {measured_step_rad:.4} rad, outside the accepted window around pi")]
    Calibration { measured_step_rad: f64 },

    /// A resource limit would be exceeded (e.g. grid size above the configured cap).
    #[error("resource error: {0}")]
    Resource(String),

    /// An acceptance check requested via `--check` did not pass.
    #[error("check failed: {0}")]
    Check(String),

    /// Snapshot or table format violation.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Map the error to its process exit code.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Validation(_) | Error::Domain(_) | Error::Resource(_) => {
                EXIT_CONFIG
            }
            Error::Numerical(_) | Error::Measurement(_) | Error::Calibration { .. } => {
                EXIT_NUMERICAL
            }
            Error::Check(_) => EXIT_CHECK,
            Error::Format(_) | Error::Io { .. } => EXIT_IO,
        }
    }

    /// Convenience constructor for I/O errors tagged with the offending path.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
