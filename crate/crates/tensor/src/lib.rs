//! Dense N-D tensors with the operator set of a small image-restoration
//! network, reverse-mode automatic differentiation over a [`Tape`], and
//! finite-difference gradient verification.
//!
//! All numeric code is generic over [`Scalar`] (`f32` for training, `f64` for
//! gradient checks).

mod error;
pub mod gradcheck;
pub mod io;
pub mod kernels;
mod ops;
mod scalar;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use kernels::conv::Conv2dSpec;
pub use ops::concat;
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
