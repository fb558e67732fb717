use std::fmt;

/// Which of the on-disk formats an error was raised for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatKind {
    Pgm,
    Nifti,
    Field,
    Params,
}

impl fmt::Display for FormatKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FormatKind::Pgm => "PGM",
            FormatKind::Nifti => "NIfTI-1",
            FormatKind::Field => "field container",
            FormatKind::Params => "parameter container",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("geometry mismatch: {left:?} vs {right:?}")]
    GeometryMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value at flat index {index}")]
    NonFiniteValue { index: usize },

    #[error("label value {value} at voxel {index} is not an integer code in [0, {count})")]
    LabelOutOfRange { index: usize, value: f64, count: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{kind}: malformed header at byte {offset}: {detail}")]
    MalformedHeader { kind: FormatKind, offset: u64, detail: String },

    #[error("{kind}: unsupported {what} at byte {offset}")]
    Unsupported { kind: FormatKind, offset: u64, what: String },

    #[error("{kind}: truncated payload, expected {expected} bytes, found {found} (at byte {offset})")]
    Truncated { kind: FormatKind, offset: u64, expected: u64, found: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad input files rather than bad arguments or numerics.
    pub fn is_format_error(&self) -> bool {
        matches!(
            self,
            Error::MalformedHeader { .. } | Error::Unsupported { .. } | Error::Truncated { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
