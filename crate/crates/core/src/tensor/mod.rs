//! Dense tensors with reverse-mode automatic differentiation.

mod adam;
mod dense;
mod gradcheck;
mod graph;
mod params;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use dense::Tensor;
pub use gradcheck::{grad_check, grad_check_store};
pub use graph::{Bound, Graph, Var};
pub use params::{Gradients, Param, ParamId, ParamStore};

