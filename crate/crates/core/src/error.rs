//! Error type shared across the crate.
//!
//! Variants are grouped by who is at fault: `Config` and `Input` point at
//! data the caller supplied, `Parse`/`Format` at malformed files or streams,
//! and `Contract`/`Internal` at bugs in the caller or in this crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad profile, policy, or workload configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A precondition of an API call was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Internal bookkeeping no longer agrees with itself.
    #[error("internal consistency error: {0}")]
    Internal(String),

    /// Payloads or arguments that are structurally valid but unusable,
    /// e.g. non-finite tensor elements or a layout mismatch.
    #[error("invalid input: {0}")]
    Input(String),

    /// A compressed stream that cannot be decoded.
    #[error("malformed stream: {0}")]
    Format(String),

    /// A row in a CSV file that cannot be parsed or validated.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// An exhaustive computation was refused because it would not finish.
    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Exit code used by the command line front end: 2 for configuration
    /// problems, 3 for unparseable input, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Parse { .. } | Error::Input(_) | Error::Format(_) => 3,
            _ => 1,
        }
    }
}
