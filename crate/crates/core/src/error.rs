use thiserror::Error;

use crate::ir::ValidationReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown counter `{0}`")]
    UnknownCounter(String),
    #[error("unbound symbol `{0}`")]
    UnboundSymbol(String),
    #[error("no grid for array `{0}`")]
    MissingGrid(String),
    #[error("array `{array}` index {index:?} out of bounds for shape {shape:?} at iteration {iteration:?}")]
    OutOfBounds {
        array: String,
        index: Vec<i64>,
        shape: Vec<usize>,
        iteration: Vec<i64>,
    },
    #[error("opaque function `{0}` cannot be interpreted")]
    OpaqueNotInterpretable(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(
        "extent upper - lower of `{counter}` is {extent}, the stencil needs at least {required}"
    )]
    ExtentTooSmall {
        counter: String,
        extent: i64,
        required: i64,
    },
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("cannot emit code: {0}")]
    Emit(String),
    #[error("compiler: {0}")]
    Compile(String),
    #[error("invalid problem:\n{0}")]
    Invalid(ValidationReport),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
