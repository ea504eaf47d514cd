//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records each operation as it is evaluated. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse and leaves
//! `∂loss/∂leaf` on every trainable leaf. Graphs are built per forward pass
//! and dropped afterwards.

mod gemm;
mod graph;
mod params;
mod tensor;

pub use graph::{ElementwiseOp, Graph, OpStats, Var, NORM_EPS, SISDR_EPS};
pub(crate) use graph::SisdrParts;
pub use params::{BoundParams, ParamRegistry};
pub use tensor::Tensor;
