//! ReLU network training with path-norm regularizers and Path-SGD.

pub mod cli;
pub mod data;
pub mod error;
pub mod forward;
pub mod graph;
pub mod norms;
pub mod optim;
pub mod rescale;

pub use error::{Error, Result};
pub use forward::{Batch, WeightMap};
pub use graph::{ArchSpec, Edge, NetworkGraph};
pub use optim::{OptimizerKind, OptimizerState, PathScaleTable};
