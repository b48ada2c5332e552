use std::fmt;

/// Errors produced anywhere in the crate.
///
/// The variants map one-to-one onto the CLI exit codes, see [`Error::exit_code`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: Location, message: String },

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Where in an input file a parse error was detected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Offset(usize),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(l) => write!(f, "line {l}"),
            Location::Offset(o) => write!(f, "byte offset {o}"),
        }
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::NumericalDegeneracy(msg.into())
    }

    pub(crate) fn parse_line(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            location: Location::Line(line),
            message: msg.into(),
        }
    }

    pub(crate) fn parse_offset(offset: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            location: Location::Offset(offset),
            message: msg.into(),
        }
    }

    /// Process exit code for this error: 2 for argument errors, 3 for parse
    /// and I/O errors, 4 for numerical degeneracy.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 2,
            Error::Parse { .. } | Error::Io(_) => 3,
            Error::NumericalDegeneracy(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize, what: &str) -> Result<()> {
    if expected != got {
        return Err(Error::invalid(format!(
            "{what}: expected dimension {expected}, got {got}"
        )));
    }
    Ok(())
}
