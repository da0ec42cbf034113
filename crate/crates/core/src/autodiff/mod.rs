//! Minimal reverse-mode differentiation: tensors, a recording graph,
//! parameters, Adam and a checkpoint container.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use graph::{Graph, Var};
pub use params::{Gradients, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
