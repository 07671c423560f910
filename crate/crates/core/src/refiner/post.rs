//! Snap the predicted part mask to whole segments.

use crate::backends::SegmentSet;
use crate::error::Result;
use crate::grid::BinaryMask;
use crate::heatmap::{mask_to_heatmap, HeatmapLabel};
use crate::model::PredictedMask;
use crate::scalar::Scalar;

/// Regions whose overlap ratio is at most this are never selected.
pub const MIN_RATIO: f64 = 0.1;
/// Fraction of the best ratio a region must exceed.
pub const RELATIVE_RATIO: f64 = 0.9;

#[derive(Clone, Debug)]
pub struct PostprocessOutcome {
    pub heatmap: HeatmapLabel<f64>,
    /// Indices into the segment set.
    pub selected: Vec<usize>,
    pub fallback_used: bool,
}

/// Indices of ratios strictly above `max(0.1, 0.9 · max ratio)`.
pub fn select_regions(ratios: &[f64]) -> Vec<usize> {
    let best = ratios.iter().copied().fold(0.0, f64::max);
    let threshold = MIN_RATIO.max(RELATIVE_RATIO * best);
    ratios.iter().enumerate().filter(|(_, &r)| r > threshold).map(|(i, _)| i).collect()
}

/// `binarize(M_pred) ∩ M_obj`, then the union of the regions it covers
/// best; the fallback label when nothing qualifies.
pub fn postprocess<T: Scalar>(
    m_pred: &PredictedMask<T>,
    m_obj: &BinaryMask,
    segments: &SegmentSet,
    fallback: &HeatmapLabel<f64>,
    blur_sigma: f64,
) -> Result<PostprocessOutcome> {
    let candidate = m_pred.grid.binarize(T::lit(0.5)).intersect(m_obj);
    let ratios: Vec<f64> = segments.regions().iter().map(|r| r.intersection_count(&candidate) as f64 / r.count() as f64).collect();
    let selected = select_regions(&ratios);
    if selected.is_empty() {
        return Ok(PostprocessOutcome { heatmap: fallback.clone(), selected, fallback_used: true });
    }
    let (h, w) = m_obj.shape();
    let union = selected.iter().fold(BinaryMask::new(h, w), |acc, &i| acc.union(&segments.regions()[i]));
    Ok(PostprocessOutcome { heatmap: mask_to_heatmap(&union, blur_sigma)?, selected, fallback_used: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::heatmap::blur_radius;
    use proptest::prelude::*;

    #[test]
    fn threshold_rule() {
        assert_eq!(select_regions(&[0.8, 0.05, 0.75]), vec![0, 2]);
        assert_eq!(select_regions(&[0.0, 0.0]), Vec::<usize>::new());
        assert_eq!(select_regions(&[0.1, 0.09]), Vec::<usize>::new());
        assert_eq!(select_regions(&[1.0]), vec![0]);
    }

    fn stripes() -> SegmentSet {
        let regions = (0..4).map(|k| BinaryMask::from_fn(16, 16, move |y, _| y / 4 == k)).collect();
        SegmentSet::new(regions, 1).unwrap()
    }

    #[test]
    fn single_full_region_and_fallback() {
        let segs = SegmentSet::new(vec![BinaryMask::from_fn(16, 16, |y, x| y < 8 && x < 8)], 1).unwrap();
        let m = PredictedMask { grid: Grid::from_fn(16, 16, |y, x| if y < 8 && x < 8 { 0.9 } else { 0.1 }) };
        let fallback = HeatmapLabel::<f64>::uniform(16, 16);
        let out = postprocess(&m, &BinaryMask::full(16, 16), &segs, &fallback, 1.0).unwrap();
        assert_eq!(out.selected, vec![0]);
        assert_eq!(out.heatmap.grid().support(), segs.regions()[0].dilate(blur_radius(1.0)));
        let none = PredictedMask { grid: Grid::filled(16, 16, 0.2) };
        let out = postprocess(&none, &BinaryMask::full(16, 16), &segs, &fallback, 1.0).unwrap();
        assert!(out.fallback_used);
        assert_eq!(out.heatmap, fallback);
    }

    proptest! {
        #[test]
        fn support_bounds_and_order_invariance(vals in prop::collection::vec(0.0f64..1.0, 256), obj_rows in 1usize..16, rot in 0usize..4) {
            let segs = stripes();
            let m = PredictedMask { grid: Grid::from_vec(16, 16, vals).unwrap() };
            let obj = BinaryMask::from_fn(16, 16, |y, _| y < obj_rows);
            let fallback = HeatmapLabel::normalize(Grid::from_fn(16, 16, |y, x| if y == 3 && x == 3 { 1.0 } else { 0.0 })).unwrap();
            let a = postprocess(&m, &obj, &segs, &fallback, 0.0).unwrap();
            let allowed = segs.regions().iter().fold(fallback.grid().support(), |acc, r| acc.union(r));
            prop_assert!(a.heatmap.grid().support().is_subset_of(&allowed));
            let mut rotated = segs.regions().to_vec();
            rotated.rotate_left(rot);
            let b = postprocess(&m, &obj, &SegmentSet::new(rotated, 1).unwrap(), &fallback, 0.0).unwrap();
            prop_assert_eq!(a.heatmap, b.heatmap);
        }
    }
}
