//! Error type shared by every pipeline stage.

use std::fmt;
use std::io;

/// Errors produced by the pipeline stages.
#[derive(Debug)]
pub enum Error {
    /// A precondition on an operation's input was violated.
    InvalidInput(String),
    /// Tensor dimensions do not line up with what a layer expects.
    Shape { layer: String, detail: String },
    /// A config file failed to parse or validate. `line` is 1-based,
    /// 0 when the failure is not tied to a specific line.
    Config { line: usize, key: String, detail: String },
    /// File I/O failure, tagged with the path involved.
    Io { path: String, source: io::Error },
    /// The snake collapsed below the minimum vertex count.
    Degenerate(String),
    /// The phantom generator could not satisfy a sampling constraint.
    Generation(String),
    /// No track survived the spatiotemporal filter.
    NoNerve,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::Shape { layer, detail } => write!(f, "shape mismatch at {layer}: {detail}"),
            Error::Config { line, key, detail } => {
                if *line == 0 {
                    write!(f, "config error: key `{key}`: {detail}")
                } else {
                    write!(f, "config error at line {line}: key `{key}`: {detail}")
                }
            }
            Error::Io { path, source } => write!(f, "i/o error on {path}: {source}"),
            Error::Degenerate(msg) => write!(f, "contour degenerated: {msg}"),
            Error::Generation(msg) => write!(f, "phantom generation failed: {msg}"),
            Error::NoNerve => write!(f, "no nerve found"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    pub fn io(path: impl Into<String>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
