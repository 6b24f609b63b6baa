//! Word-graph-guided pointer-generator summarization of radiology findings.

pub mod ablation;
pub mod config;
pub mod corpus;
pub mod decoder;
pub mod encoders;
pub mod error;
pub mod inference;
pub mod layers;
pub mod model;
pub mod rouge;
pub mod synthetic;
pub mod training;
pub mod wordgraph;

pub use graphsum_numerics as numerics;

pub use config::{Config, Gnn, ModelConfig, TrainConfig, Variant};
pub use error::{CoreError, Result};
pub use model::Model;
