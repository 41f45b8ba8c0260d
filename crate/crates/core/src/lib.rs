//! Dynamic re-parameterized multi-branch convolution.
//!
//! [`layer::DrpnLayer`] mixes 3x3, 1x3, 3x1, 1x1 and identity branches with
//! input-dependent per-channel weights, and folds them into one 3x3 kernel
//! for inference. Around it: dense f64 tensor primitives, a reverse-mode
//! tape, a toy size-classification trainer, cost accounting, and file formats.

pub mod autodiff;
pub mod cost;
pub mod error;
pub mod instrument;
pub mod io;
pub mod layer;
pub mod tensor;
pub mod toy;
pub mod verify;

pub use error::{Error, Result};
pub use layer::{make_special_case, BranchKernels, BranchWeights, DrpnLayer, SpecialCase};
pub use tensor::{Array, Kernel4, Matrix, Tensor4};
