//! Deterministic synthetic datasets.
//!
//! Every egocentric image shows one object made of a rectangular body and an
//! elliptical part whose side and colour depend on the affordance. Exocentric
//! images show a fresh instance of the same object with the part overpainted
//! by a skin-coloured "hand" blob and an arm reaching to the image border.
//! The exact geometry of every image is kept so mock backends can answer
//! detection and segmentation queries and tests have a ground truth.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::dataset::{write_dataset, DatasetIndex};
use crate::data::mapping::PartMapping;
use crate::data::sample::{ImageSource, Sample, Split, View};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Rect};
use crate::heatmap::{mask_to_heatmap, HeatmapLabel};

pub const FIXTURE_META_FILE: &str = "fixture.json";
pub const FIXTURE_MAPPING_FILE: &str = "part_mapping.tsv";
/// Padding between an entity's pixels and the box a detector reports.
pub const BOX_MARGIN: usize = 2;
/// Minimum fraction of part pixels the occluder hides in exocentric images.
pub const MIN_OCCLUSION: f64 = 0.6;

const OBJECTS: &[&str] = &["knife", "bottle", "cup", "scissors", "drum", "suitcase", "bicycle", "racket", "hammer", "spoon"];
const AFFORDANCES: &[&str] = &["hold", "open", "cut", "beat", "push", "swing", "pour", "lift"];
const PART_WORDS: &[&str] = &["handle", "cap", "blade", "drumhead", "handlebars", "grip", "spout", "rim"];
const BODY_COLORS: &[[u8; 3]] = &[
    [60, 90, 160],
    [50, 140, 70],
    [150, 120, 40],
    [110, 60, 130],
    [40, 130, 140],
    [140, 70, 60],
    [90, 90, 90],
    [70, 110, 40],
    [120, 100, 150],
    [60, 60, 120],
];
const PART_COLORS: &[[u8; 3]] = &[
    [210, 40, 40],
    [240, 200, 30],
    [30, 30, 30],
    [250, 250, 250],
    [230, 110, 20],
    [20, 200, 220],
    [200, 30, 160],
    [120, 240, 60],
];
const SKIN: [u8; 3] = [224, 172, 138];
const BACKGROUND: [u8; 3] = [186, 186, 180];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub seed: u64,
    pub n_objects: usize,
    pub n_affordances: usize,
    pub ego_per_class: usize,
    pub exo_per_class: usize,
    pub test_per_class: usize,
    pub size: usize,
    pub gt_sigma: f64,
}

impl FixtureSpec {
    pub fn new(seed: u64, n_objects: usize, n_affordances: usize) -> Self {
        Self { seed, n_objects, n_affordances, ego_per_class: 6, exo_per_class: 4, test_per_class: 3, size: 64, gt_sigma: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl Ellipse {
    fn contains(&self, x: usize, y: usize) -> bool {
        let dx = (x as f64 + 0.5 - self.cx) / self.rx;
        let dy = (y as f64 + 0.5 - self.cy) / self.ry;
        dx * dx + dy * dy <= 1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Rect(Rect),
    Ellipse(Ellipse),
}

impl Shape {
    fn contains(&self, x: usize, y: usize) -> bool {
        match self {
            Shape::Rect(r) => r.contains(x, y),
            Shape::Ellipse(e) => e.contains(x, y),
        }
    }
}

/// Geometry of one fixture image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageGeometry {
    pub width: usize,
    pub height: usize,
    pub view: View,
    pub object: String,
    pub affordance: String,
    pub part_name: String,
    pub body: Rect,
    pub part: Ellipse,
    pub occluders: Vec<Shape>,
    pub decoy: Rect,
}

impl ImageGeometry {
    fn mask(&self, f: impl Fn(usize, usize) -> bool) -> BinaryMask {
        BinaryMask::from_fn(self.height, self.width, |y, x| f(x, y))
    }

    pub fn occluder_mask(&self) -> BinaryMask {
        self.mask(|x, y| self.occluders.iter().any(|s| s.contains(x, y)))
    }

    /// All part pixels, ignoring occlusion.
    pub fn full_part_mask(&self) -> BinaryMask {
        self.mask(|x, y| self.part.contains(x, y))
    }

    pub fn part_mask(&self) -> BinaryMask {
        self.full_part_mask().minus(&self.occluder_mask())
    }

    /// Visible body pixels not covered by the part.
    pub fn body_mask(&self) -> BinaryMask {
        self.mask(|x, y| self.body.contains(x, y) && !self.part.contains(x, y)).minus(&self.occluder_mask())
    }

    /// Visible object pixels (body and part).
    pub fn object_mask(&self) -> BinaryMask {
        self.mask(|x, y| self.body.contains(x, y) || self.part.contains(x, y)).minus(&self.occluder_mask())
    }

    pub fn part_box(&self) -> Option<Rect> {
        self.part_mask().bbox().map(|r| r.expand(BOX_MARGIN, self.width, self.height))
    }

    pub fn object_box(&self) -> Rect {
        self.object_mask().bbox().expect("fixture object is never fully hidden").expand(BOX_MARGIN, self.width, self.height)
    }

    /// Fraction of part pixels hidden by the occluder.
    pub fn occlusion(&self) -> f64 {
        let full = self.full_part_mask();
        full.intersection_count(&self.occluder_mask()) as f64 / full.count().max(1) as f64
    }

    /// Superpixel partition: part, body, occluder and the background split
    /// into quadrants. Regions smaller than `min_area` are dropped.
    pub fn segments(&self, min_area: usize) -> Vec<BinaryMask> {
        let part = self.part_mask();
        let body = self.body_mask();
        let occ = self.occluder_mask();
        let taken = part.union(&body).union(&occ);
        let (hh, hw) = (self.height / 2, self.width / 2);
        let mut regions = vec![part, body, occ];
        for (qy, qx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let q = self.mask(|x, y| (y >= hh) as usize == qy && (x >= hw) as usize == qx);
            regions.push(q.minus(&taken));
        }
        regions.into_iter().filter(|r| r.count() >= min_area && r.count() > 0).collect()
    }
}

/// Geometry record for every fixture image, keyed by sample id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureMeta {
    pub spec: FixtureSpec,
    pub images: BTreeMap<String, ImageGeometry>,
}

impl FixtureMeta {
    pub fn load(root: &Path) -> Result<Self> {
        crate::io::read_json(&root.join(FIXTURE_META_FILE))
    }
}

#[derive(Clone, Debug)]
pub struct Fixture {
    pub index: DatasetIndex,
    pub mapping: PartMapping,
    pub meta: FixtureMeta,
}

impl Fixture {
    /// Writes images, ground truth, the part mapping and the geometry record.
    pub fn write(&self, root: &Path, setting: &str) -> Result<()> {
        write_dataset(&self.index, root, setting)?;
        crate::io::write_atomic_str(&root.join(FIXTURE_MAPPING_FILE), &self.mapping.to_text())?;
        crate::io::write_json(&root.join(FIXTURE_META_FILE), &self.meta)
    }
}

pub fn object_name(k: usize) -> String {
    OBJECTS.get(k).map(|s| s.to_string()).unwrap_or_else(|| format!("object{k}"))
}

pub fn affordance_name(k: usize) -> String {
    AFFORDANCES.get(k).map(|s| s.to_string()).unwrap_or_else(|| format!("action{k}"))
}

pub fn part_name(object: usize, affordance: usize) -> String {
    let word = PART_WORDS.get(affordance).map(|s| s.to_string()).unwrap_or_else(|| format!("part{affordance}"));
    format!("{word} of the {}", object_name(object))
}

fn layout(rng: &mut ChaCha8Rng, size: usize, obj: usize, aff: usize) -> (Rect, Ellipse) {
    let s = size as f64 / 64.0;
    let bw = (rng.random_range(18.0..26.0) + 2.0 * (obj % 3) as f64) * s;
    let bh = (rng.random_range(10.0..15.0) + (obj % 2) as f64 * 2.0) * s;
    let long = rng.random_range(5.5..7.5) * s;
    let short = rng.random_range(4.0..5.5) * s;
    let side = aff % 4;
    let (rx, ry) = if side % 2 == 0 { (long, short) } else { (short, long) };
    let jitter = rng.random_range(-2.0..2.0) * s;
    // part centre relative to the body centre
    let (pcx, pcy) = match side {
        0 => (-bw / 2.0 - rx + 2.0 * s, jitter),
        1 => (jitter, -bh / 2.0 - ry + 2.0 * s),
        2 => (bw / 2.0 + rx - 2.0 * s, jitter),
        _ => (jitter, bh / 2.0 + ry - 2.0 * s),
    };
    let min_x = (-bw / 2.0).min(pcx - rx);
    let max_x = (bw / 2.0).max(pcx + rx);
    let min_y = (-bh / 2.0).min(pcy - ry);
    let max_y = (bh / 2.0).max(pcy + ry);
    let border = 5.0 * s;
    let lo_x = border - min_x;
    let hi_x = size as f64 - border - max_x;
    let lo_y = border - min_y;
    let hi_y = size as f64 - border - max_y;
    let cx = if hi_x > lo_x { rng.random_range(lo_x..hi_x) } else { size as f64 / 2.0 };
    let cy = if hi_y > lo_y { rng.random_range(lo_y..hi_y) } else { size as f64 / 2.0 };
    let body = Rect::new(
        (cx - bw / 2.0).round() as usize,
        (cy - bh / 2.0).round() as usize,
        (cx + bw / 2.0).round() as usize,
        (cy + bh / 2.0).round() as usize,
    );
    (body, Ellipse { cx: cx + pcx, cy: cy + pcy, rx, ry })
}

fn occluders(rng: &mut ChaCha8Rng, size: usize, part: &Ellipse, side: usize) -> Vec<Shape> {
    let grow = rng.random_range(1.05..1.35);
    let hand = Ellipse {
        cx: part.cx + rng.random_range(-1.0..1.0),
        cy: part.cy + rng.random_range(-1.0..1.0),
        rx: part.rx * grow,
        ry: part.ry * grow,
    };
    let half = (part.rx.min(part.ry) * 0.8).max(1.0);
    let (x, y) = (hand.cx.max(0.0) as usize, hand.cy.max(0.0) as usize);
    let w = size;
    let span = |c: usize| (c.saturating_sub(half as usize), (c + half as usize + 1).min(w));
    let arm = match side % 4 {
        0 => {
            let (y0, y1) = span(y);
            Rect::new(0, y0, x.max(1), y1)
        }
        1 => {
            let (x0, x1) = span(x);
            Rect::new(x0, 0, x1, y.max(1))
        }
        2 => {
            let (y0, y1) = span(y);
            Rect::new(x.min(w - 1), y0, w, y1)
        }
        _ => {
            let (x0, x1) = span(x);
            Rect::new(x0, y.min(w - 1), x1, w)
        }
    };
    vec![Shape::Ellipse(hand), Shape::Rect(arm)]
}

fn decoy_box(size: usize, object: Rect) -> Rect {
    let d = (size / 6).max(4);
    let cx = (object.x0 + object.x1) / 2;
    let cy = (object.y0 + object.y1) / 2;
    let x0 = if cx < size / 2 { size - d - 2 } else { 2 };
    let y0 = if cy < size / 2 { size - d - 2 } else { 2 };
    Rect::new(x0, y0, x0 + d, y0 + d)
}

fn jitter(rng: &mut ChaCha8Rng, c: [u8; 3], amount: i32) -> Rgb<u8> {
    let mut out = [0u8; 3];
    for (o, &v) in out.iter_mut().zip(&c) {
        *o = (v as i32 + rng.random_range(-amount..=amount)).clamp(0, 255) as u8;
    }
    Rgb(out)
}

fn render(rng: &mut ChaCha8Rng, g: &ImageGeometry, obj: usize, aff: usize) -> RgbImage {
    let body_c = BODY_COLORS[obj % BODY_COLORS.len()];
    let part_c = PART_COLORS[aff % PART_COLORS.len()];
    let mut img = RgbImage::new(g.width as u32, g.height as u32);
    for y in 0..g.height {
        for x in 0..g.width {
            let c = if g.occluders.iter().any(|s| s.contains(x, y)) {
                jitter(rng, SKIN, 6)
            } else if g.part.contains(x, y) {
                jitter(rng, part_c, 6)
            } else if g.body.contains(x, y) {
                jitter(rng, body_c, 6)
            } else {
                jitter(rng, BACKGROUND, 10)
            };
            img.put_pixel(x as u32, y as u32, c);
        }
    }
    img
}

fn make_geometry(rng: &mut ChaCha8Rng, spec: &FixtureSpec, view: View, obj: usize, aff: usize) -> ImageGeometry {
    loop {
        let (body, part) = layout(rng, spec.size, obj, aff);
        let occ = if view == View::Exo { occluders(rng, spec.size, &part, aff) } else { Vec::new() };
        let mut g = ImageGeometry {
            width: spec.size,
            height: spec.size,
            view,
            object: object_name(obj),
            affordance: affordance_name(aff),
            part_name: part_name(obj, aff),
            body,
            part,
            occluders: occ,
            decoy: Rect::new(0, 0, 1, 1),
        };
        if view == View::Exo && g.occlusion() < MIN_OCCLUSION {
            continue;
        }
        g.decoy = decoy_box(spec.size, g.object_box());
        return g;
    }
}

/// Builds the fixture in memory. Identical specs give bit-identical output.
pub fn generate_fixture(spec: &FixtureSpec) -> Result<Fixture> {
    if spec.n_objects < 2 || spec.n_affordances < 1 {
        return Err(Error::Invalid(format!(
            "fixture needs at least 2 objects and 1 affordance, got {} and {}",
            spec.n_objects, spec.n_affordances
        )));
    }
    if spec.size < 64 {
        return Err(Error::Invalid(format!("fixture image size {} below 64", spec.size)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut mapping = PartMapping::new();
    let mut samples = Vec::new();
    let mut gt = BTreeMap::new();
    let mut images = BTreeMap::new();
    for obj in 0..spec.n_objects {
        for aff in 0..spec.n_affordances {
            let (o, a) = (object_name(obj), affordance_name(aff));
            mapping.insert(&o, &a, &part_name(obj, aff))?;
            let plan = [
                (Split::Train, View::Ego, spec.ego_per_class),
                (Split::Train, View::Exo, spec.exo_per_class),
                (Split::Test, View::Ego, spec.test_per_class),
            ];
            for (split, view, count) in plan {
                for k in 0..count {
                    let geom = make_geometry(&mut rng, spec, view, obj, aff);
                    let img = render(&mut rng, &geom, obj, aff);
                    let tag = match view {
                        View::Ego => "ego",
                        View::Exo => "exo",
                    };
                    let id = format!("{}/{}/{a}/{o}/{o}_{tag}_{k:04}", split.dir_name(), view.dir_name());
                    if split == Split::Test {
                        gt.insert(id.clone(), mask_to_heatmap::<f64>(&geom.part_mask(), spec.gt_sigma)?);
                    }
                    samples.push(Sample::new(id.clone(), ImageSource::Memory(Arc::new(img)), view, &o, &a, split)?);
                    images.insert(id, geom);
                }
            }
        }
    }
    Ok(Fixture { index: DatasetIndex::new(samples, gt)?, mapping, meta: FixtureMeta { spec: spec.clone(), images } })
}

/// Fraction of the heatmap mass inside the mask.
pub fn mass_inside<T: crate::scalar::Scalar>(h: &HeatmapLabel<T>, mask: &BinaryMask) -> f64 {
    h.data().iter().zip(mask.data()).filter(|(_, &m)| m).map(|(v, _)| v.as_f64()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::blur_radius;

    fn images_equal(a: &Fixture, b: &Fixture) -> bool {
        a.index.samples.iter().zip(&b.index.samples).all(|(x, y)| match (&x.image, &y.image) {
            (ImageSource::Memory(p), ImageSource::Memory(q)) => p.as_raw() == q.as_raw() && x.id == y.id,
            _ => false,
        })
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = FixtureSpec::new(11, 2, 2);
        let a = generate_fixture(&spec).unwrap();
        let b = generate_fixture(&spec).unwrap();
        assert!(images_equal(&a, &b));
        assert_eq!(a.meta, b.meta);
        assert_eq!(a.index.gt_heatmaps, b.index.gt_heatmaps);
        let c = generate_fixture(&FixtureSpec::new(12, 2, 2)).unwrap();
        assert!(!images_equal(&a, &c));
    }

    #[test]
    fn class_count_is_product() {
        let f = generate_fixture(&FixtureSpec::new(3, 4, 2)).unwrap();
        assert_eq!(f.index.class_pairs().len(), 8);
        for (o, a) in f.index.class_pairs() {
            assert!(f.mapping.lookup(&o, &a).is_ok());
        }
    }

    #[test]
    fn ground_truth_support_is_dilated_part() {
        let f = generate_fixture(&FixtureSpec::new(5, 2, 2)).unwrap();
        assert!(!f.index.gt_heatmaps.is_empty());
        for (id, h) in &f.index.gt_heatmaps {
            let geom = &f.meta.images[id];
            let want = geom.part_mask().dilate(blur_radius(f.meta.spec.gt_sigma));
            assert_eq!(h.grid().support(), want, "{id}");
        }
    }

    #[test]
    fn occluder_hides_most_of_the_part() {
        let f = generate_fixture(&FixtureSpec::new(9, 3, 4)).unwrap();
        for g in f.meta.images.values().filter(|g| g.view == View::Exo) {
            assert!(g.occlusion() >= MIN_OCCLUSION);
        }
    }

    #[test]
    fn segments_are_disjoint_and_cover() {
        let f = generate_fixture(&FixtureSpec::new(2, 2, 4)).unwrap();
        for g in f.meta.images.values() {
            let segs = g.segments(1);
            for i in 0..segs.len() {
                for j in i + 1..segs.len() {
                    assert_eq!(segs[i].intersection_count(&segs[j]), 0);
                }
            }
            let covered: usize = segs.iter().map(BinaryMask::count).sum();
            assert_eq!(covered, g.width * g.height);
        }
    }

    #[test]
    fn rejects_too_few_objects() {
        assert!(generate_fixture(&FixtureSpec::new(1, 1, 1)).is_err());
    }
}
