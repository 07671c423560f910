//! Pseudo-label generation and exocentric pairing.

pub mod initial;
pub mod pairing;
pub mod store;

pub use initial::{detect_object_box, generate_initial_label, object_mask, BoxRecord, InitialLabel, ObjectRegion, Provenance};
pub use pairing::{build_pair_index, encoder_patches, masked_average, object_patchmask, pair_score, ExoPairIndex, PairInput, DEFAULT_TOP_N};
pub use store::{LabelStore, StoredLabel};
