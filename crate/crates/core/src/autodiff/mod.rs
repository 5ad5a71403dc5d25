//! Reverse-mode differentiation, parameters and the optimizer.

pub mod gradcheck;
mod graph;
mod optim;
mod param;
mod tensor;

pub use graph::{asinhc_sq, sinhc_sq, Gradients, Graph, RowMix, Var, GATHER_ZERO};
pub use optim::{AdamW, AdamWConfig};
pub use param::{LrGroup, Parameter};
pub use tensor::Tensor;
