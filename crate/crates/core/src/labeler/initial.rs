//! Initial pseudo labels: detect the mapped part, segment every kept box,
//! repair background masks and blur the union into a heatmap.

use serde::{Deserialize, Serialize};

use crate::backends::{background_sanity_fix, filter_boxes, BackendImage, Backends, DetectionBox};
use crate::data::{PartMapping, Sample};
use crate::error::Result;
use crate::grid::{BinaryMask, Rect};
use crate::heatmap::{mask_to_heatmap, HeatmapLabel};

/// What happened to one kept box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    #[serde(rename = "box")]
    pub bbox: DetectionBox,
    /// Pixels in the segmenter's raw mask.
    pub raw_area: usize,
    pub edge_sum: usize,
    pub perimeter: usize,
    pub inverted: bool,
}

/// Sidecar stored next to every label image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub sample_id: String,
    pub query: String,
    pub detector: String,
    pub segmenter: String,
    /// Every box the detector returned, before filtering.
    pub detections: Vec<DetectionBox>,
    pub kept: Vec<BoxRecord>,
    /// No usable mask: the label is the uniform map.
    pub degenerate: bool,
    pub blur_sigma: f64,
    /// Refinement only: how many segments were selected, and whether the
    /// original label was kept instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined_segments: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine_fallback: Option<bool>,
    #[serde(default)]
    pub config_hash: String,
}

#[derive(Clone, Debug)]
pub struct InitialLabel {
    pub heatmap: HeatmapLabel<f64>,
    pub provenance: Provenance,
    /// Masks as returned by the segmenter, one per kept box.
    pub raw_masks: Vec<BinaryMask>,
    /// Union of the fixed masks.
    pub mask: BinaryMask,
}

/// Pseudo label for one egocentric image. The mapping is consulted before
/// any backend call; zero detections (or an empty union) fall back to the
/// uniform label flagged as degenerate.
pub fn generate_initial_label(sample: &Sample, mapping: &PartMapping, backends: &Backends, blur_sigma: f64) -> Result<InitialLabel> {
    let query = mapping.lookup(&sample.object, &sample.affordance)?.to_string();
    let img = sample.load_image()?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let bi = BackendImage { id: &sample.id, rgb: &img };
    let detections = backends.detector.detect(bi, &query)?;
    let mut kept = Vec::new();
    let mut raw_masks = Vec::new();
    let mut union = BinaryMask::new(h, w);
    for b in filter_boxes(&detections) {
        let raw = backends.segmenter.segment_box(bi, &b)?;
        let fix = background_sanity_fix(&raw, &b)?;
        union = union.union(&fix.mask);
        kept.push(BoxRecord { bbox: b, raw_area: raw.count(), edge_sum: fix.edge_sum, perimeter: fix.perimeter, inverted: fix.inverted });
        raw_masks.push(raw);
    }
    let degenerate = union.is_empty();
    let heatmap = if degenerate { HeatmapLabel::uniform(h, w) } else { mask_to_heatmap(&union, blur_sigma)? };
    let provenance = Provenance {
        sample_id: sample.id.clone(),
        query,
        detector: backends.detector.backend_id().to_string(),
        segmenter: backends.segmenter.backend_id().to_string(),
        detections,
        kept,
        degenerate,
        blur_sigma,
        refined_segments: None,
        refine_fallback: None,
        config_hash: String::new(),
    };
    Ok(InitialLabel { heatmap, provenance, raw_masks, mask: union })
}

/// Object box and pixel mask of an image, queried with the object name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectRegion {
    #[serde(rename = "box")]
    pub bbox: DetectionBox,
    pub width: usize,
    pub height: usize,
    /// Set when nothing was detected and the whole image stands in.
    pub fallback: bool,
}

/// Most confident surviving object box; the whole image if there is none.
pub fn detect_object_box(sample: &Sample, backends: &Backends) -> Result<ObjectRegion> {
    let img = sample.load_image()?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let boxes = filter_boxes(&backends.detector.detect(BackendImage { id: &sample.id, rgb: &img }, &sample.object)?);
    let best = boxes.into_iter().reduce(|a, b| if b.confidence > a.confidence { b } else { a });
    Ok(match best {
        Some(b) => ObjectRegion { bbox: b, width: w, height: h, fallback: false },
        None => ObjectRegion { bbox: DetectionBox::new(Rect::new(0, 0, w, h), 0.0), width: w, height: h, fallback: true },
    })
}

/// Pixel-level object mask from the segmenter, prompted with the object box
/// and passed through the background fix.
pub fn object_mask(sample: &Sample, region: &ObjectRegion, backends: &Backends) -> Result<BinaryMask> {
    let img = sample.load_image()?;
    let raw = backends.segmenter.segment_box(BackendImage { id: &sample.id, rgb: &img }, &region.bbox)?;
    Ok(background_sanity_fix(&raw, &region.bbox)?.mask)
}
