use thiserror::Error;

/// Errors raised by the numeric core, the layer, the tape and the file formats.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported kernel extent {kh}x{kw}")]
    KernelExtent { kh: usize, kw: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("tape node {0} does not exist")]
    DanglingNode(usize),

    #[error("loss node must be scalar, got {0} elements")]
    NonScalarLoss(usize),

    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("bad checkpoint magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported checkpoint version {0}")]
    Version(u16),

    #[error("truncated checkpoint: {0}")]
    Truncated(String),

    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("i/o: {0}")]
    Io(String),

    #[error("malformed annotation document: {0}")]
    Annotation(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Shape(format!($($arg)*))
    };
}
pub(crate) use shape_err;
