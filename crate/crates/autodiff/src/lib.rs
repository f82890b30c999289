//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! Values are recorded on a [`Tape`] as operations are evaluated; a single
//! call to [`Tape::backward`] then produces gradients for every leaf that
//! requires one. Parameters live outside the tape in [`ParamSet`]s and are
//! bound as leaves for each forward pass.
//!
//! Everything is generic over [`Scalar`]: `f32` for training, `f64` for
//! gradient checks.

pub mod error;
pub mod gradcheck;
pub mod kernels;
mod ops;
pub mod optim;
mod scalar;
mod tape;
mod tensor;

pub use error::{AutodiffError, Result};
pub use ops::log_sum_exp;
pub use optim::{adamw_update, clip_global_norm, clip_grad_norm, global_norm, AdamW, AdamWConfig, Moments};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{numel, Bound, ParamSet, Tensor};
