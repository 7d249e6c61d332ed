//! Hierarchical vision transformer with attribute prototypes.
//!
//! An image passes a shared ViT backbone, then one transformer branch per
//! human-defined attribute. Each branch yields an attribute vector and a
//! score; the target branch predicts from the attribute vectors alone. Every
//! attribute value owns learnable prototypes that are periodically pushed
//! onto real training samples, so predictions can be explained by scores,
//! attention heatmaps and example images.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod explain;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod prototypes;
pub mod schema;
pub mod train;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use evaluate::InferenceMode;
pub use losses::{LossBreakdown, Phase};
pub use model::{HierViT, ModelConfig, ModelOutput, Score};
pub use prototypes::PrototypeBank;
pub use schema::{Attribute, AttributeSchema, Scale, TargetSpec};
pub use train::{TrainConfig, Trainer};
