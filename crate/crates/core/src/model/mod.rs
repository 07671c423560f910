//! The grounding network and its building blocks.

pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod image;
pub mod layers;
pub mod network;
pub mod params;
pub mod text;

pub use checkpoint::Checkpoint;
pub use config::{HeadMode, ModelConfig};
pub use encoder::{Features, VisionEncoder};
pub use image::ColorImage;
pub use network::{logits_to_heatmap, logits_to_mask, GroundingModel, PredictedMask, ReasonVars};
pub use params::{Cx, Group, ParamStore};
pub use text::{build_text_encoder, HashTextEncoder, TextConfig, TextEncoder};
