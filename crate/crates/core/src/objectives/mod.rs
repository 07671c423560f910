//! Losses, augmentation, the optimiser and the grounding training loop.

pub mod augment;
pub mod losses;
pub mod optim;
pub mod train;

pub use augment::{augment_ego, crop_and_flip, stitch_augment, AugmentOptions, Stitched};
pub use losses::{align_loss, exo_cls_loss, kl_loss, reason_loss, LossReport, ReasonPairing};
pub use optim::{AdamW, AdamWConfig, GradAccumulator};
pub use train::{sample_loss, train, SampleInputs, StepLog, TrainConfig, TrainData, TrainOutcome};
