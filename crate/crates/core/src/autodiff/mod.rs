//! Dense tensors, a reverse-mode tape, Adam and a finite-difference checker.

mod adam;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_params, PARAM_GRAD_FLOOR};
pub use params::{NamedTensor, ParamId, ParamStore};
pub use tape::{softplus, Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
