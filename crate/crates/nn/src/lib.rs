//! Minimal CPU tensor engine with layer-wise reverse-mode gradients.
//!
//! Networks are built as [`Sequential`] stacks of [`Layer`]s described by
//! [`LayerSpec`]s. Every layer caches what it needs during `forward` and
//! produces input gradients during `backward`, accumulating parameter
//! gradients into its [`Param`]s. Arithmetic is generic over [`Scalar`]
//! (`f32` for speed, `f64` for gradient checking and bitwise
//! reproducibility).

mod error;
pub mod finite_diff;
pub mod layers;
mod network;
pub mod optim;
mod scalar;
mod tensor;
pub mod weights;

pub use error::{NnError, Result};
pub use layers::{Activation, Layer, LayerKind, LayerSpec, Mode, Padding, Param};
pub use network::{Loss, Sequential};
pub use optim::{Method, OptimizerState};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;
