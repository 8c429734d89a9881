//! Minimal tensor and autodiff machinery for the networks.

mod conv;
mod graph;
mod tensor;

pub use graph::{power_iteration, Gradients, Graph, NodeId};
pub use tensor::{Real, Tensor};
