//! Affordance grounding trained on pseudo labels: synthetic data, label
//! generation and refinement, the grounding network, its objectives, metrics
//! and the pipeline driving them. Numeric code is generic over `f32`/`f64`.

pub mod autograd;
pub mod backends;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod grasp;
pub mod grid;
pub mod heatmap;
pub mod io;
pub mod labeler;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod pipeline;
pub mod refiner;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type GroundingModelF32 = model::GroundingModel<f32>;
pub type GroundingModelF64 = model::GroundingModel<f64>;
pub type HeatmapF32 = heatmap::HeatmapLabel<f32>;
pub type HeatmapF64 = heatmap::HeatmapLabel<f64>;
pub type GridF32 = grid::Grid<f32>;
pub type GridF64 = grid::Grid<f64>;
pub type TensorF32 = tensor::Tensor<f32>;
pub type TensorF64 = tensor::Tensor<f64>;
pub type TrainOutcomeF32 = objectives::TrainOutcome<f32>;
pub type TrainOutcomeF64 = objectives::TrainOutcome<f64>;
