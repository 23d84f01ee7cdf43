//! Partition-parallel training of RGCN encoders with a DistMult decoder for
//! knowledge-graph link prediction.

pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod partition;
pub mod sampler;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{KnowledgeGraph, Triplet};
