//! Dense N-dimensional tensors with a define-by-run reverse-mode autodiff
//! graph, parameter storage and an AdamW optimizer with cosine decay.
//!
//! Every forward pass builds a fresh [`Graph`]; parameters live in a
//! [`ParamStore`] and enter a graph as leaves. After [`Graph::backward`],
//! gradients are available for every node that the root depends on.

mod error;
mod graph;
mod kernels;
mod params;
mod real;
mod shape;
mod tensor;

pub mod gradcheck;
pub mod init;
pub mod nn;
pub mod optim;

pub use error::{Result, TensorError};
pub use graph::{Graph, Reduction, Var};
pub use params::{ParamId, ParamStore};
pub use real::{DType, Real};
pub use tensor::Tensor;
