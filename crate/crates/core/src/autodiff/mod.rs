//! Reverse-mode automatic differentiation over dense real tensors.

mod checkpoint;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod params;

pub use checkpoint::Checkpoint;
pub use graph::{Gradients, Graph, Var, LOG_DIV_FLOOR};
pub use params::{AdamConfig, ParamStore};
