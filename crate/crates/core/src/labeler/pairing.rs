//! Exocentric partners for every egocentric image, ranked by the cosine
//! similarity of object-pooled frozen encoder features.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::grid::BinaryMask;
use crate::labeler::initial::ObjectRegion;
use crate::model::params::frozen;
use crate::model::{Cx, GroundingModel};
use crate::scalar::Scalar;
use crate::tensor::{cosine, Tensor};

/// Default number of partners kept per egocentric image.
pub const DEFAULT_TOP_N: usize = 10;

/// Patches of a `grid × grid` layout that overlap the object box.
pub fn object_patchmask(region: &ObjectRegion, grid: usize) -> BinaryMask {
    let r = region.bbox.rect();
    let (w, h) = (region.width as f64, region.height as f64);
    let g = grid as f64;
    let overlaps = |lo: usize, hi: usize, k: usize, extent: f64| {
        let (c0, c1) = (k as f64 * extent / g, (k + 1) as f64 * extent / g);
        (lo as f64) < c1 && (hi as f64) > c0
    };
    BinaryMask::from_fn(grid, grid, |i, j| overlaps(r.y0, r.y1, i, h) && overlaps(r.x0, r.x1, j, w))
}

/// Mean of the feature rows selected by `mask` (row-major over the grid).
pub fn masked_average<T: Scalar>(features: &Tensor<T>, mask: &BinaryMask) -> Result<Vec<T>> {
    if mask.data().len() != features.rows() {
        return Err(Error::ShapeMismatch(format!("mask has {} cells, features have {} rows", mask.data().len(), features.rows())));
    }
    let n = mask.count();
    if n == 0 {
        return Err(Error::EmptyPooling);
    }
    let mut out = vec![T::zero(); features.cols()];
    for (r, _) in mask.data().iter().enumerate().filter(|(_, &m)| m) {
        for (o, &v) in out.iter_mut().zip(features.row(r)) {
            *o += v;
        }
    }
    let n = T::from_usize_lossy(n);
    out.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

/// Patch tokens of the model's encoder for one image, as `f64`.
pub fn encoder_patches<T: Scalar>(model: &GroundingModel<T>, sample: &Sample) -> Result<Tensor<f64>> {
    let img = sample.load_image()?;
    let mut cx = Cx::new(&model.params, frozen);
    let x = model.prepare(&img);
    let feats = model.encode(&mut cx, &x);
    Ok(cx.g.value(feats.patches).cast())
}

/// Cosine similarity of the two object-pooled feature vectors.
pub fn pair_score(ego: &Tensor<f64>, ego_mask: &BinaryMask, exo: &Tensor<f64>, exo_mask: &BinaryMask) -> Result<f64> {
    let a = masked_average(ego, ego_mask)?;
    let b = masked_average(exo, exo_mask)?;
    cosine(&a, &b).ok_or(Error::ZeroVector)
}

/// Ranked partners per egocentric id; best first, ties broken by exo id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExoPairIndex {
    pub partners: BTreeMap<String, Vec<(String, f64)>>,
}

/// Pooled features of one image, ready to be paired.
#[derive(Clone, Debug)]
pub struct PairInput<'a> {
    pub sample: &'a Sample,
    pub features: Tensor<f64>,
    pub mask: BinaryMask,
}

/// Keeps the `top_n` best exocentric images of the same class for every
/// egocentric image. Classes without exocentric images are reported together.
pub fn build_pair_index(ego: &[PairInput<'_>], exo: &[PairInput<'_>], top_n: usize) -> Result<ExoPairIndex> {
    let mut by_class: BTreeMap<(&str, &str), Vec<(&PairInput<'_>, Vec<f64>)>> = BTreeMap::new();
    for e in exo {
        by_class.entry(e.sample.class_pair()).or_default().push((e, masked_average(&e.features, &e.mask)?));
    }
    let mut missing = std::collections::BTreeSet::new();
    let mut partners = BTreeMap::new();
    for g in ego {
        let Some(pool) = by_class.get(&g.sample.class_pair()) else {
            missing.insert((g.sample.object.clone(), g.sample.affordance.clone()));
            continue;
        };
        let f = masked_average(&g.features, &g.mask)?;
        let mut scored = pool
            .iter()
            .map(|(e, v)| Ok((e.sample.id.clone(), cosine(&f, v).ok_or(Error::ZeroVector)?)))
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(top_n.max(1));
        partners.insert(g.sample.id.clone(), scored);
    }
    if !missing.is_empty() {
        return Err(Error::MissingPartners(missing.into_iter().collect()));
    }
    Ok(ExoPairIndex { partners })
}

impl ExoPairIndex {
    pub fn get(&self, ego_id: &str) -> Option<&[(String, f64)]> {
        self.partners.get(ego_id).map(|v| v.as_slice())
    }

    /// Uniform draw from the ranked list.
    pub fn sample_partner<R: Rng + ?Sized>(&self, ego: &Sample, rng: &mut R) -> Result<&str> {
        self.draw(&ego.id, &ego.object, &ego.affordance, rng)
    }

    pub fn draw<R: Rng + ?Sized>(&self, ego_id: &str, object: &str, affordance: &str, rng: &mut R) -> Result<&str> {
        match self.partners.get(ego_id) {
            Some(list) if !list.is_empty() => Ok(&list[rng.random_range(0..list.len())].0),
            _ => Err(Error::MissingPartners(vec![(object.to_string(), affordance.to_string())])),
        }
    }

    /// The `k` best partners, fewer if the list is shorter.
    pub fn top(&self, ego: &Sample, k: usize) -> Result<Vec<&str>> {
        match self.partners.get(&ego.id) {
            Some(list) if !list.is_empty() => Ok(list.iter().take(k).map(|(id, _)| id.as_str()).collect()),
            _ => Err(Error::MissingPartners(vec![(ego.object.clone(), ego.affordance.clone())])),
        }
    }

    /// One `ego<TAB>exo<TAB>score` line per pair, in rank order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("ego\texo\tscore\n");
        for (ego, list) in &self.partners {
            for (exo, s) in list {
                let _ = writeln!(out, "{ego}\t{exo}\t{s:?}");
            }
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut partners: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |m: &str| Error::Parse { path: path.to_path_buf(), message: format!("line {}: {m}", n + 1) };
            let cols: Vec<&str> = line.split('\t').collect();
            let [ego, exo, score] = cols[..] else { return Err(bad("expected 3 tab-separated columns")) };
            let score: f64 = score.parse().map_err(|_| bad("score is not a number"))?;
            partners.entry(ego.to_string()).or_default().push((exo.to_string(), score));
        }
        Ok(Self { partners })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic_str(path, &self.to_tsv())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&crate::io::read_to_string(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::DetectionBox;
    use crate::data::{ImageSource, Split, View};
    use crate::grid::Rect;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn sample(id: &str, view: View, obj: &str) -> Sample {
        let img = Arc::new(image::RgbImage::new(32, 32));
        Sample::new(id, ImageSource::Memory(img), view, obj, "hold", Split::Train).unwrap()
    }

    fn input<'a>(s: &'a Sample, row: &[f64]) -> PairInput<'a> {
        let features = Tensor::from_vec(2, 2, [row, &[0.0, 0.0][..]].concat());
        PairInput { sample: s, features, mask: BinaryMask::from_vec(1, 2, vec![true, false]).unwrap() }
    }

    #[test]
    fn patchmask_covers_overlapping_cells() {
        let region = ObjectRegion { bbox: DetectionBox::new(Rect::new(10, 0, 17, 5), 0.9), width: 64, height: 64, fallback: false };
        let m = object_patchmask(&region, 4);
        let cells: Vec<_> = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).filter(|&(i, j)| m.get(i, j)).collect();
        assert_eq!(cells, vec![(0, 0), (0, 1)]);
    }

    #[test]
    fn masked_average_rejects_empty() {
        let f = Tensor::from_vec(2, 1, vec![1.0, 3.0]);
        assert_eq!(masked_average(&f, &BinaryMask::full(1, 2)).unwrap(), vec![2.0]);
        assert!(matches!(masked_average(&f, &BinaryMask::new(1, 2)), Err(Error::EmptyPooling)));
    }

    #[test]
    fn ranking_ties_and_roundtrip() {
        let g = sample("ego/a", View::Ego, "cup");
        let (x1, x2, x3) = (sample("exo/b", View::Exo, "cup"), sample("exo/a", View::Exo, "cup"), sample("exo/c", View::Exo, "cup"));
        let other = sample("exo/z", View::Exo, "knife");
        let ego = vec![input(&g, &[1.0, 0.0])];
        let exo = vec![input(&x1, &[1.0, 1.0]), input(&x2, &[2.0, 2.0]), input(&x3, &[1.0, 0.0]), input(&other, &[1.0, 0.0])];
        let idx = build_pair_index(&ego, &exo, 10).unwrap();
        let ids: Vec<_> = idx.get("ego/a").unwrap().iter().map(|(i, _)| i.as_str()).collect();
        assert_eq!(ids, vec!["exo/c", "exo/a", "exo/b"]);
        assert_eq!(build_pair_index(&ego, &exo, 2).unwrap().get("ego/a").unwrap().len(), 2);
        let back = ExoPairIndex::parse(&idx.to_tsv(), Path::new("x")).unwrap();
        assert_eq!(back, idx);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert!(ids.contains(&idx.sample_partner(&g, &mut rng).unwrap()));
        }
    }

    #[test]
    fn class_without_exo_is_reported() {
        let g = sample("ego/a", View::Ego, "cup");
        let x = sample("exo/a", View::Exo, "knife");
        let err = build_pair_index(&[input(&g, &[1.0, 0.0])], &[input(&x, &[1.0, 0.0])], 3).unwrap_err();
        assert!(matches!(err, Error::MissingPartners(v) if v == vec![("cup".to_string(), "hold".to_string())]));
    }
}
