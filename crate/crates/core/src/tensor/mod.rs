//! Dense tensors, reverse-mode autodiff, gradient checking and AdamW.

mod adamw;
pub mod checkpoint;
mod dense;
mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod param;

pub use adamw::{adamw_step, OptimizerState};
pub use dense::Tensor;
pub(crate) use gradcheck::select_coords;
pub use gradcheck::{grad_check, grad_check_inputs, grad_check_params, relative_error, Coords, GradCheck};
pub use graph::{Gradients, Graph, Var};
pub use kernels::{argmax, cosine};
pub use param::{Param, ParamGrads, ParamId, ParamStore};

#[cfg(test)]
mod tests;
