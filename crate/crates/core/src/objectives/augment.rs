//! Image/label augmentation: random crop, horizontal flip and 2×2 stitching.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Rect};
use crate::heatmap::HeatmapLabel;
use crate::model::ColorImage;
use crate::scalar::Scalar;

/// Side the image is enlarged to before a `side × side` crop (256 for 224).
pub fn crop_source_side(side: usize) -> usize {
    (side as f64 * 256.0 / 224.0).round() as usize
}

fn crop_label<T: Scalar>(label: &HeatmapLabel<T>, r: Rect) -> Option<HeatmapLabel<T>> {
    let g = label.grid();
    HeatmapLabel::normalize(Grid::from_fn(r.height(), r.width(), |y, x| g.get(r.y0 + y, r.x0 + x))).ok()
}

/// Enlarge to `crop_source_side`, crop a random `side × side` window and
/// flip with probability `flip_prob`. Both draws always happen so the random
/// stream does not depend on the options. A window that cuts away all label
/// mass is replaced by the plain resize.
pub fn crop_and_flip<T: Scalar, R: Rng + ?Sized>(
    image: &ColorImage<T>,
    label: &HeatmapLabel<T>,
    side: usize,
    crop: bool,
    flip_prob: f64,
    rng: &mut R,
) -> Result<(ColorImage<T>, HeatmapLabel<T>)> {
    let big = crop_source_side(side);
    let oy = rng.random_range(0..=big - side);
    let ox = rng.random_range(0..=big - side);
    let flip = rng.random::<f64>() < flip_prob;
    let plain = || Ok::<_, Error>((image.resize(side, side), label.resize(side, side)?));
    let (mut img, mut lab) = if crop {
        let r = Rect::new(ox, oy, ox + side, oy + side);
        let enlarged = label.resize(big, big)?;
        match crop_label(&enlarged, r) {
            Some(l) => (image.resize(big, big).crop(r), l),
            None => plain()?,
        }
    } else {
        plain()?
    };
    if flip {
        img = img.flip_horizontal();
        lab = lab.flip_horizontal();
    }
    Ok((img, lab))
}

#[derive(Clone, Debug)]
pub struct Stitched<T> {
    pub image: ColorImage<T>,
    pub label: HeatmapLabel<T>,
    /// 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
    pub quadrant: usize,
}

/// Place the target and three distractors in a 2×2 layout, the target in a
/// uniformly drawn quadrant. Returns `None` when fewer than three
/// distractors are given.
pub fn stitch_augment<T: Scalar, R: Rng + ?Sized>(
    image: &ColorImage<T>,
    label: &HeatmapLabel<T>,
    distractors: &[&ColorImage<T>],
    rng: &mut R,
) -> Result<Option<Stitched<T>>> {
    if distractors.len() < 3 {
        return Ok(None);
    }
    let (h, w) = (image.height(), image.width());
    let (th, tw) = (h / 2, w / 2);
    if th == 0 || tw == 0 {
        return Err(Error::Invalid(format!("image {h}x{w} too small to stitch")));
    }
    let quadrant = rng.random_range(0..4);
    let mut out = ColorImage::zeros(h, w);
    let mut others = distractors.iter();
    for q in 0..4 {
        let tile = if q == quadrant { image } else { others.next().expect("three distractors") };
        out.paste(&tile.resize(th, tw), (q / 2) * th, (q % 2) * tw);
    }
    let small = label.resize(th, tw)?;
    let (y0, x0) = ((quadrant / 2) * th, (quadrant % 2) * tw);
    let grid = Grid::from_fn(h, w, |y, x| {
        if (y0..y0 + th).contains(&y) && (x0..x0 + tw).contains(&x) {
            small.get(y - y0, x - x0)
        } else {
            T::zero()
        }
    });
    Ok(Some(Stitched { image: out, label: HeatmapLabel::normalize(grid)?, quadrant }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentOptions {
    pub crop: bool,
    pub flip_prob: f64,
    pub stitch_prob: f64,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        Self { crop: true, flip_prob: 0.5, stitch_prob: 0.5 }
    }
}

#[derive(Clone, Debug)]
pub struct Augmented<T> {
    pub image: ColorImage<T>,
    pub label: HeatmapLabel<T>,
    pub quadrant: Option<usize>,
}

/// Crop, flip, then stitch with probability `stitch_prob` using three
/// distractors drawn without replacement from `pool`. The stitch coin is
/// always drawn; the distractor and quadrant draws only when it lands.
pub fn augment_ego<T: Scalar, R: Rng + ?Sized>(
    image: &ColorImage<T>,
    label: &HeatmapLabel<T>,
    side: usize,
    opts: &AugmentOptions,
    pool: &[&ColorImage<T>],
    rng: &mut R,
) -> Result<Augmented<T>> {
    let (img, lab) = crop_and_flip(image, label, side, opts.crop, opts.flip_prob, rng)?;
    if rng.random::<f64>() < opts.stitch_prob && pool.len() >= 3 {
        let picks = rand::seq::index::sample(rng, pool.len(), 3);
        let distractors: Vec<&ColorImage<T>> = picks.iter().map(|i| pool[i]).collect();
        if let Some(s) = stitch_augment(&img, &lab, &distractors, rng)? {
            return Ok(Augmented { image: s.image, label: s.label, quadrant: Some(s.quadrant) });
        }
    }
    Ok(Augmented { image: img, label: lab, quadrant: None })
}
