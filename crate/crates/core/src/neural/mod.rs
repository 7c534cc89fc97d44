//! Small deterministic numeric core: tensors, dense / recurrent / embedding
//! layers with hand-written backpropagation, losses, Adam, and
//! finite-difference gradient checking. Everything runs in `f64`.

mod adam;
pub mod checkpoint;
mod dense;
pub mod gradcheck;
mod gru;
pub mod loss;
mod params;
mod tensor;

pub use adam::AdamState;
pub use dense::{sigmoid, softplus, Activation, Dense, Embedding};
pub use gradcheck::{grad_check, GradCheck};
pub use gru::{GruCell, GruStep};
pub use params::{clip_global_norm, prefixed, Parameters};
pub use tensor::Tensor;

/// Global-norm threshold applied to gradients before each optimizer step.
pub const GRAD_CLIP_NORM: f64 = 5.0;
