//! Dense tensors, reverse-mode autodiff, GRU cell and Adam.

pub mod adam;
pub mod checkpoint;
mod dropout;
mod float;
pub mod gradcheck;
mod graph;
mod gru;
mod params;
pub mod rng;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use dropout::dropout_mask;
pub use float::Float;
pub use gradcheck::{grad_check, grad_check_params};
pub use graph::{Gradients, Graph, Var};
pub use gru::GruParams;
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::{broadcast_shape, Tensor};
