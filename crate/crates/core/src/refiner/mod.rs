//! Part-mask refinement: a second head trained with the occlusion
//! similarity loss, then snapped to segmenter regions.

pub mod features;
pub mod loss;
pub mod post;
pub mod train;

pub use features::{crop_encode, CroppedFeature, ExtractorKind, FeatureExtractor, FrozenVit, PatchColor};
pub use loss::{box_grid_map, exo_target, pretrain_loss, pretrain_loss_var, ExoPartner};
pub use post::{postprocess, select_regions, PostprocessOutcome};
pub use train::{refine_labels, resolve_scope, train_refinement, RefineConfig, RefineData, RefineOutcome, RefineStep, RefinedLabel};
