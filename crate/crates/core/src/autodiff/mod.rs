//! Dense `f64` tensors with tape-based reverse-mode differentiation.

mod checkpoint;
mod gradcheck;
mod graph;
pub mod kernels;
mod tensor;

pub use checkpoint::{ParamStore, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use gradcheck::grad_check;
pub use graph::{Graph, JointMap, Var};
pub use kernels::ConvLayout;
pub use tensor::Tensor;
