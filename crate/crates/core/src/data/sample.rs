use std::path::PathBuf;
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest accepted image side.
pub const MIN_IMAGE_SIDE: u32 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Ego,
    Exo,
}

impl View {
    pub fn dir_name(self) -> &'static str {
        match self {
            View::Ego => "egocentric",
            View::Exo => "exocentric",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "trainset",
            Split::Test => "testset",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" | "trainset" => Ok(Split::Train),
            "test" | "testset" => Ok(Split::Test),
            other => Err(Error::Invalid(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub enum ImageSource {
    File(PathBuf),
    Memory(Arc<RgbImage>),
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub image: ImageSource,
    pub view: View,
    pub object: String,
    pub affordance: String,
    pub split: Split,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: ImageSource, view: View, object: &str, affordance: &str, split: Split) -> Result<Self> {
        if object.is_empty() || affordance.is_empty() {
            return Err(Error::Invalid("object and affordance must be non-empty".into()));
        }
        Ok(Self { id: id.into(), image, view, object: object.to_string(), affordance: affordance.to_string(), split })
    }

    pub fn load_image(&self) -> Result<Arc<RgbImage>> {
        let img = match &self.image {
            ImageSource::Memory(img) => img.clone(),
            ImageSource::File(path) => Arc::new(crate::io::load_rgb(path)?),
        };
        if img.width() < MIN_IMAGE_SIDE || img.height() < MIN_IMAGE_SIDE {
            return Err(Error::Invalid(format!("image {} is {}x{}, below {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}", self.id, img.width(), img.height())));
        }
        Ok(img)
    }

    pub fn class_pair(&self) -> (&str, &str) {
        (&self.object, &self.affordance)
    }
}
