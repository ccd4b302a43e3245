use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by tensor kernels, the autodiff tape and the model pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("invalid groups: {0}")]
    InvalidGroups(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("unsupported transform size {0}")]
    UnsupportedSize(usize),
    #[error("fftshift requires even extents, got {0}x{1}")]
    OddExtent(usize, usize),
    #[error("{name} = {value} outside [0, 1]")]
    InvalidRange { name: &'static str, value: f64 },
    #[error("head count {heads} does not divide {channels} channels")]
    HeadMismatch { heads: usize, channels: usize },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("input tensor is empty")]
    EmptyInput,
    #[error("kernel sums to {0}, expected 1")]
    UnnormalizedKernel(f64),
    #[error("patch {patch} larger than image {height}x{width}")]
    PatchTooLarge { patch: usize, height: usize, width: usize },
    #[error("image {0}x{1} too small for an 11x11 SSIM window")]
    ImageTooSmall(usize, usize),
    #[error("non-finite loss at step {step}; block norms: {norms:?}")]
    NaNLoss {
        step: usize,
        norms: Vec<(String, f64)>,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training stopped by caller: {0}")]
    Interrupted(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::ShapeMismatch(alloc::format!($($arg)*))
    };
}
pub(crate) use shape_err;
