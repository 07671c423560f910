//! Label-sanity rules applied around the detector and segmenter.

use crate::backends::types::DetectionBox;
use crate::error::Result;
use crate::grid::BinaryMask;

/// Boxes at or above this confidence survive filtering.
pub const CONFIDENCE_THRESHOLD: f64 = 0.5;

/// Keep boxes with confidence ≥ 0.5; if none qualifies keep only the most
/// confident box. Ties on the fallback go to the earliest box.
pub fn filter_boxes(boxes: &[DetectionBox]) -> Vec<DetectionBox> {
    let kept: Vec<DetectionBox> = boxes.iter().copied().filter(|b| b.confidence >= CONFIDENCE_THRESHOLD).collect();
    if !kept.is_empty() || boxes.is_empty() {
        return kept;
    }
    let mut best = boxes[0];
    for b in &boxes[1..] {
        if b.confidence > best.confidence {
            best = *b;
        }
    }
    vec![best]
}

/// Outcome of [`background_sanity_fix`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SanityFix {
    pub mask: BinaryMask,
    pub inverted: bool,
    pub edge_sum: usize,
    pub perimeter: usize,
}

/// If the mask covers more than half of the box's inner boundary ring, the
/// segmenter most likely picked the background: invert the mask inside the
/// box. Pixels outside the box are never touched.
pub fn background_sanity_fix(mask: &BinaryMask, prompt: &DetectionBox) -> Result<SanityFix> {
    prompt.validate(mask.width(), mask.height())?;
    let rect = prompt.rect();
    let ring = rect.boundary_ring();
    let perimeter = ring.len();
    let edge_sum = ring.iter().filter(|&&(x, y)| mask.get(y, x)).count();
    // edge_sum > perimeter / 2, kept in integers
    let inverted = 2 * edge_sum > perimeter;
    let mut out = mask.clone();
    if inverted {
        for y in rect.y0..rect.y1 {
            for x in rect.x0..rect.x1 {
                out.set(y, x, !mask.get(y, x));
            }
        }
    }
    Ok(SanityFix { mask: out, inverted, edge_sum, perimeter })
}
