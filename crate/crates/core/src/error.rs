use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward called on a non-scalar tensor of shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward already ran on this graph; run a new forward pass first")]
    BackwardRepeated,

    #[error("gradient tracking is disabled on this graph")]
    GradDisabled,

    #[error("optimizer step counter overflow")]
    StepOverflow,

    #[error("event stream not sorted: event {index} has t={t} < previous t={prev}")]
    UnsortedEvents { index: usize, t: u64, prev: u64 },

    #[error("event {index} at ({x}, {y}) p={p} outside a {width}x{height} sensor")]
    EventOutOfBounds {
        index: usize,
        x: u32,
        y: u32,
        p: u8,
        width: usize,
        height: usize,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("file truncated while reading {0}")]
    Truncated(&'static str),

    #[error("checkpoint configuration inconsistent: {0}")]
    ConfigMismatch(String),

    #[error("parameter mismatch at '{name}': {detail}")]
    ParamMismatch { name: String, detail: String },

    #[error("object placement failed after {attempts} attempts ({objects} objects in {width}x{height})")]
    Placement {
        attempts: usize,
        objects: usize,
        width: usize,
        height: usize,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error("gradient check failed: {0}")]
    GradCheck(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Coarse failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) | Error::ConfigMismatch(_) => ErrorClass::Usage,
            Error::NonFiniteLoss { .. }
            | Error::GradCheck(_)
            | Error::StepOverflow
            | Error::NonScalarLoss(_)
            | Error::BackwardRepeated
            | Error::GradDisabled => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
