//! Numerical core of the AdaIR restoration model.
//!
//! Everything here works without `std`: tensors, reverse-mode differentiation,
//! FFT and frequency masks, the network blocks, synthetic degradations, the
//! optimiser and the quality metrics. File formats and the command line live in
//! the companion `adair` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod aflb;
pub mod analysis;
pub mod autodiff;
pub mod blocks;
pub mod degrade;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod metrics;
pub mod network;
pub mod params;
pub mod probe;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use autodiff::{Activation, BinaryKind, ConvSpec, Gradients, Graph, Var};
pub use error::{Error, Result};
pub use tensor::{Precision, Scalar, Tensor};
