//! Three-branch image+tabular classification: encoders, fusion blocks,
//! label-inconsistency training, ensemble inference, metrics,
//! explainability and a synthetic multimodal dataset generator.

pub mod blocks;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod explain;
pub mod formats;
pub mod fusion;
pub mod grouping;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod train;

pub use config::{FusionKind, ModelConfig};
pub use error::{Error, Result};
pub use model::{Branch, BranchProbs, Forward, TnfModel};
