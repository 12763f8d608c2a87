//! Prioritized node-wise message propagation for graph neural networks.
//!
//! A backbone GNN (APPNP or GCN) is coupled with a propagation controller that
//! picks a per-node propagation depth (learning to break / learning to update)
//! and a weight controller that reweights the supervised loss per node. The
//! three parameter sets are trained by alternating optimization.

pub mod autodiff;
pub mod backbone;
pub mod controllers;
pub mod data;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod nodes;
pub mod par;
pub mod priority;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{Graph, NormalizedAdjacency};
pub use tensor::Matrix;
