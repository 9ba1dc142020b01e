//! Decentralized federated learning over configurable communication graphs.

pub mod bounds;
pub mod data;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod mixing;
pub mod models;
pub mod overlay;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
pub use graph::Graph;
pub use mixing::MixingMatrix;
