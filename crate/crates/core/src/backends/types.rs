use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Rect};

/// Detector output: a pixel box, inclusive-exclusive, with a confidence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub confidence: f64,
}

impl DetectionBox {
    pub fn new(rect: Rect, confidence: f64) -> Self {
        Self { x0: rect.x0, y0: rect.y0, x1: rect.x1, y1: rect.y1, confidence }
    }

    pub fn rect(&self) -> Rect {
        Rect::new(self.x0, self.y0, self.x1, self.y1)
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if !self.rect().fits_in(width, height) {
            return Err(Error::Invalid(format!("box {:?} outside {width}x{height} image", self.rect())));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::Invalid(format!("confidence {} outside [0, 1]", self.confidence)));
        }
        Ok(())
    }
}

/// Non-overlapping regions over one image.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SegmentSet {
    regions: Vec<BinaryMask>,
}

impl SegmentSet {
    /// Validates pairwise disjointness and the minimum area.
    pub fn new(regions: Vec<BinaryMask>, min_area: usize) -> Result<Self> {
        for (i, r) in regions.iter().enumerate() {
            if r.count() < min_area.max(1) {
                return Err(Error::Invalid(format!("segment {i} has area {} below {min_area}", r.count())));
            }
            for (j, q) in regions.iter().enumerate().skip(i + 1) {
                if r.shape() != q.shape() {
                    return Err(Error::ShapeMismatch(format!("segments {i} and {j}")));
                }
                if r.intersection_count(q) > 0 {
                    return Err(Error::Invalid(format!("segments {i} and {j} overlap")));
                }
            }
        }
        Ok(Self { regions })
    }

    pub fn regions(&self) -> &[BinaryMask] {
        &self.regions
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn into_regions(self) -> Vec<BinaryMask> {
        self.regions
    }
}

/// An image handed to a backend, with the id used for caching and lookups.
#[derive(Clone, Copy, Debug)]
pub struct BackendImage<'a> {
    pub id: &'a str,
    pub rgb: &'a RgbImage,
}

impl BackendImage<'_> {
    pub fn width(&self) -> usize {
        self.rgb.width() as usize
    }

    pub fn height(&self) -> usize {
        self.rgb.height() as usize
    }
}

/// Open-vocabulary (part) detector.
pub trait PartDetector: Send + Sync {
    fn backend_id(&self) -> &str;

    /// Zero or more boxes for `query`. `Error::BackendUnavailable` is
    /// retriable and distinct from an empty result.
    fn detect(&self, image: BackendImage<'_>, query: &str) -> Result<Vec<DetectionBox>>;
}

/// Promptable segmenter.
pub trait Segmenter: Send + Sync {
    fn backend_id(&self) -> &str;

    fn segment_box(&self, image: BackendImage<'_>, prompt: &DetectionBox) -> Result<BinaryMask>;

    /// Automatic whole-image segmentation into disjoint regions.
    fn auto_segment(&self, image: BackendImage<'_>) -> Result<SegmentSet>;
}
