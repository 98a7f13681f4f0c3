//! Minimal dense numeric substrate: row-major tensors, a define-by-run
//! reverse-mode tape, Adam, central-difference gradient checks, and a
//! binary checkpoint format.
//!
//! Two precisions share one code path: `f32` for training and `f64` for
//! gradient verification.

mod adam;
mod attention;
pub mod checkpoint;
mod error;
mod gradcheck;
mod loss;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig, OptimError};
pub use attention::MASK_PENALTY;
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, RELATIVE_ERROR_FLOOR};
pub use params::{uniform, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
