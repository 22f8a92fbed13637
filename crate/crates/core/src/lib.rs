//! EagerNet: fully-connected intrusion-detection networks with one output
//! head per hidden layer, trained on a weighted sum of all head losses and
//! evaluated with confidence-gated early exit.
//!
//! The crate covers the whole pipeline:
//!
//! - [`flowmeter`]: packet records to 31-value CAIA flow features
//! - [`dataset`]: deduplication, split, z-score normalization, label encoding
//! - [`nn`]: dense layers, activations, dropout and Adam
//! - [`model`]: the multi-head network, early-exit inference, model files
//! - [`trainer`]: per-head losses, weight schedules, combined backprop
//! - [`metrics`]: classification metrics, threshold sweeps, layer/class accuracy

pub mod baseline;
pub mod dataset;
pub mod error;
pub mod flowmeter;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod synthetic;
pub mod trainer;

pub use dataset::{ClassSet, Dataset, LabelMode, Labels, Normalization, SplitPart, Subset};
pub use error::{Error, ErrorClass, Result};
pub use flowmeter::{FeatureVector, FlowKey, FlowTable, FlowTableConfig, PacketRecord};
pub use model::{EagerNet, EagerPrediction, HeadTap, ModelConfig};
pub use nn::{DenseLayer, Matrix};
pub use trainer::{BackpropMode, History, LossWeights, TrainConfig, WeightScheme};
