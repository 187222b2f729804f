use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("gradient requested for a tensor that does not require grad")]
    Detached,
    #[error("{0}: produced a non-finite value")]
    NonFinite(&'static str),
    #[error("non-finite loss at iteration {0}")]
    NonFiniteLoss(usize),
    #[error("image {height}x{width} is too small, need at least {need_h}x{need_w}")]
    ImageTooSmall {
        height: usize,
        width: usize,
        need_h: usize,
        need_w: usize,
    },
    #[error("checkpoint does not match the architecture: {0}")]
    Architecture(String),
    #[error("missing checkpoint for variant(s): {0}")]
    MissingVariant(String),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid { op, msg: msg.into() }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
