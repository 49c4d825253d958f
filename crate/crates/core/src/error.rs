use std::path::PathBuf;

/// Errors raised anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    /// Context annihilated all probability mass for one object.
    #[error("degenerate support for object {object}{}", iteration_suffix(.iteration))]
    DegenerateSupport {
        object: usize,
        iteration: Option<usize>,
    },

    #[error("tape incomplete: the relaxation was run without recording")]
    TapeIncomplete,

    #[error("target of length {target_len} needs at least {required} frames, got {frames}")]
    TargetTooLong {
        target_len: usize,
        required: usize,
        frames: usize,
    },

    #[error("instance too large for exhaustive enumeration: {paths} paths exceeds {limit}")]
    InstanceTooLarge { paths: f64, limit: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("all references are empty")]
    EmptyReference,

    #[error("cannot read {}: {source}", .path.display())]
    FileUnreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {}: {source}", .path.display())]
    FileUnwritable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },

    #[error("sample {id}: {message}")]
    InvariantViolation { id: String, message: String },

    #[error("invalid synthetic spec: {0}")]
    SpecInvalid(String),

    #[error("sample {id}: {source}")]
    Sample {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("every sample in the batch was skipped ({skipped} samples)")]
    BatchSkipped { skipped: usize },
}

fn iteration_suffix(iteration: &Option<usize>) -> String {
    match iteration {
        Some(it) => format!(" at iteration {it}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn in_sample(self, id: &str) -> Self {
        match self {
            e @ Error::Sample { .. } => e,
            e => Error::Sample {
                id: id.to_string(),
                source: Box::new(e),
            },
        }
    }

    /// Strips any sample wrapper and returns the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::Sample { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
