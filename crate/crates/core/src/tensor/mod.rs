//! Dense tensors with tape-based reverse-mode differentiation.

mod graph;
pub(crate) mod kernels;
mod value;

pub use graph::{BinaryOp, Gradients, Graph, ReduceOp, UnaryOp, Var};
pub use kernels::reflect;
pub use value::Tensor;

pub(crate) use graph::conv_dims;
