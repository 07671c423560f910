//! Dataset ingestion, the part-name mapping and synthetic fixtures.

pub mod dataset;
pub mod fixture;
pub mod mapping;
pub mod sample;

pub use dataset::{load_dataset, write_dataset, DatasetIndex, LoadReport};
pub use fixture::{generate_fixture, Fixture, FixtureMeta, FixtureSpec, ImageGeometry};
pub use mapping::{load_part_mapping, PartMapping};
pub use sample::{ImageSource, Sample, Split, View};
