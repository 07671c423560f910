//! Fixture-driven detector and segmenter.
//!
//! Answers come straight from the geometry record of a synthetic fixture, so
//! every stage downstream of the backends can be tested against exact ground
//! truth.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backends::types::{BackendImage, DetectionBox, PartDetector, SegmentSet, Segmenter};
use crate::data::fixture::{FixtureMeta, ImageGeometry};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Rect};

pub const MOCK_BACKEND_ID: &str = "mock";
pub const MOCK_CONFIDENCE: f64 = 0.9;
pub const DECOY_CONFIDENCE: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockOptions {
    /// Add a low-confidence box on empty background to every answer.
    pub decoy: bool,
    /// Return the in-box complement of the true mask from `segment_box`.
    pub adversarial: bool,
    /// Smallest region `auto_segment` keeps.
    pub min_area: usize,
}

impl Default for MockOptions {
    fn default() -> Self {
        Self { decoy: false, adversarial: false, min_area: 20 }
    }
}

#[derive(Clone, Debug)]
pub struct MockBackend {
    images: Arc<BTreeMap<String, ImageGeometry>>,
    options: MockOptions,
}

fn iou(a: Rect, b: Rect) -> f64 {
    let ix = a.x1.min(b.x1).saturating_sub(a.x0.max(b.x0));
    let iy = a.y1.min(b.y1).saturating_sub(a.y0.max(b.y0));
    let inter = (ix * iy) as f64;
    let union = (a.area() + b.area()) as f64 - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

impl MockBackend {
    pub fn new(meta: &FixtureMeta, options: MockOptions) -> Self {
        Self { images: Arc::new(meta.images.clone()), options }
    }

    pub fn options(&self) -> &MockOptions {
        &self.options
    }

    fn geometry(&self, image: BackendImage<'_>) -> Result<&ImageGeometry> {
        let g = self.images.get(image.id).ok_or_else(|| Error::UnknownSample(image.id.to_string()))?;
        if (g.width, g.height) != (image.width(), image.height()) {
            return Err(Error::ShapeMismatch(format!(
                "image {} is {}x{}, fixture geometry says {}x{}",
                image.id,
                image.width(),
                image.height(),
                g.width,
                g.height
            )));
        }
        Ok(g)
    }

    /// Entities the mock can be asked about, with their reported box.
    fn entities(g: &ImageGeometry) -> Vec<(Rect, BinaryMask)> {
        let mut out = Vec::with_capacity(2);
        if let Some(b) = g.part_box() {
            out.push((b, g.part_mask()));
        }
        out.push((g.object_box(), g.object_mask()));
        out
    }
}

impl PartDetector for MockBackend {
    fn backend_id(&self) -> &str {
        MOCK_BACKEND_ID
    }

    fn detect(&self, image: BackendImage<'_>, query: &str) -> Result<Vec<DetectionBox>> {
        if query.trim().is_empty() {
            return Err(Error::Invalid("empty detection query".into()));
        }
        let g = self.geometry(image)?;
        let hit = if query == g.part_name {
            g.part_box()
        } else if query == g.object {
            Some(g.object_box())
        } else {
            None
        };
        let mut out: Vec<DetectionBox> = hit.into_iter().map(|r| DetectionBox::new(r, MOCK_CONFIDENCE)).collect();
        if self.options.decoy && !out.is_empty() {
            out.push(DetectionBox::new(g.decoy, DECOY_CONFIDENCE));
        }
        Ok(out)
    }
}

impl Segmenter for MockBackend {
    fn backend_id(&self) -> &str {
        MOCK_BACKEND_ID
    }

    fn segment_box(&self, image: BackendImage<'_>, prompt: &DetectionBox) -> Result<BinaryMask> {
        let g = self.geometry(image)?;
        prompt.validate(g.width, g.height)?;
        let rect = prompt.rect();
        let best = Self::entities(g)
            .into_iter()
            .map(|(b, m)| (iou(b, rect), m))
            .filter(|(s, _)| *s > 0.0)
            .max_by(|a, b| a.0.total_cmp(&b.0));
        let inside = match best {
            Some((_, m)) => m.restrict_to(rect),
            None => BinaryMask::new(g.height, g.width),
        };
        if self.options.adversarial {
            Ok(BinaryMask::from_rect(g.height, g.width, rect).minus(&inside))
        } else {
            Ok(inside)
        }
    }

    fn auto_segment(&self, image: BackendImage<'_>) -> Result<SegmentSet> {
        let g = self.geometry(image)?;
        SegmentSet::new(g.segments(self.options.min_area), self.options.min_area)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::heuristics::{background_sanity_fix, filter_boxes};
    use crate::data::fixture::{generate_fixture, FixtureSpec};
    use crate::data::View;

    fn setup(options: MockOptions) -> (crate::data::Fixture, MockBackend) {
        let fx = generate_fixture(&FixtureSpec::new(7, 2, 2)).unwrap();
        let mb = MockBackend::new(&fx.meta, options);
        (fx, mb)
    }

    #[test]
    fn part_query_returns_part_box() {
        let (fx, mb) = setup(MockOptions::default());
        for s in fx.index.ego() {
            let img = s.load_image().unwrap();
            let g = &fx.meta.images[&s.id];
            let bi = BackendImage { id: &s.id, rgb: &img };
            let boxes = mb.detect(bi, &g.part_name).unwrap();
            assert_eq!(boxes.len(), 1);
            assert_eq!(boxes[0].rect(), g.part_box().unwrap());
            assert!(mb.detect(bi, "teapot spout").unwrap().is_empty());
            let mask = mb.segment_box(bi, &boxes[0]).unwrap();
            assert_eq!(mask, g.part_mask());
        }
    }

    #[test]
    fn decoy_adds_low_confidence_box() {
        let (fx, mb) = setup(MockOptions { decoy: true, ..Default::default() });
        let s = fx.index.ego().next().unwrap();
        let img = s.load_image().unwrap();
        let g = &fx.meta.images[&s.id];
        let boxes = mb.detect(BackendImage { id: &s.id, rgb: &img }, &g.part_name).unwrap();
        let confs: Vec<f64> = boxes.iter().map(|b| b.confidence).collect();
        assert_eq!(confs, vec![0.9, 0.3]);
        assert_eq!(filter_boxes(&boxes).len(), 1);
    }

    #[test]
    fn tight_box_mask_stays_inside() {
        let (fx, mb) = setup(MockOptions::default());
        let s = fx.index.ego().next().unwrap();
        let img = s.load_image().unwrap();
        let g = &fx.meta.images[&s.id];
        let r = g.part_mask().bbox().unwrap();
        let shrunk = Rect::new(r.x0 + 1, r.y0 + 1, r.x1 - 1, r.y1 - 1);
        let m = mb.segment_box(BackendImage { id: &s.id, rgb: &img }, &DetectionBox::new(shrunk, 0.9)).unwrap();
        assert!(m.is_subset_of(&BinaryMask::from_rect(64, 64, shrunk)));
        assert!(!m.is_empty());
    }

    #[test]
    fn adversarial_mask_trips_the_fix() {
        let (fx, mb) = setup(MockOptions { adversarial: true, ..Default::default() });
        let s = fx.index.ego().next().unwrap();
        let img = s.load_image().unwrap();
        let g = &fx.meta.images[&s.id];
        let b = DetectionBox::new(g.part_box().unwrap(), 0.9);
        let raw = mb.segment_box(BackendImage { id: &s.id, rgb: &img }, &b).unwrap();
        let fix = background_sanity_fix(&raw, &b).unwrap();
        assert!(2 * fix.edge_sum > fix.perimeter);
        assert!(fix.inverted);
        assert_eq!(fix.mask, g.part_mask());
    }

    #[test]
    fn auto_segment_partition() {
        let (fx, mb) = setup(MockOptions::default());
        for s in fx.index.samples.iter().filter(|s| s.view == View::Exo).take(4) {
            let img = s.load_image().unwrap();
            let bi = BackendImage { id: &s.id, rgb: &img };
            let set = mb.auto_segment(bi).unwrap();
            let covered: usize = set.regions().iter().map(|r| r.count()).sum();
            assert!(covered as f64 >= 0.95 * 64.0 * 64.0);
            for (i, a) in set.regions().iter().enumerate() {
                for b in &set.regions()[i + 1..] {
                    assert_eq!(a.intersection_count(b), 0);
                }
            }
            assert_eq!(set, mb.auto_segment(bi).unwrap());
        }
        let (_, strict) = setup(MockOptions { min_area: 64 * 64 + 1, ..Default::default() });
        let s = fx.index.ego().next().unwrap();
        let img = s.load_image().unwrap();
        assert!(strict.auto_segment(BackendImage { id: &s.id, rgb: &img }).unwrap().is_empty());
    }

    #[test]
    fn unknown_image_is_an_error() {
        let (_, mb) = setup(MockOptions::default());
        let img = image::RgbImage::new(64, 64);
        assert!(matches!(mb.detect(BackendImage { id: "nope", rgb: &img }, "cap"), Err(Error::UnknownSample(_))));
    }
}
