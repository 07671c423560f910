//! Occlusion-similarity pretraining of the part-mask head, and the labels it
//! produces.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::RowMap;
use crate::backends::{BackendImage, Backends};
use crate::data::{DatasetIndex, PartMapping, Sample};
use crate::error::{Error, Result};
use crate::grid::{compose, BinaryMask};
use crate::labeler::{object_mask, ExoPairIndex, ObjectRegion, Provenance, StoredLabel};
use crate::model::network::upsample_map;
use crate::model::params::{all_trainable, heads_only};
use crate::model::{ColorImage, Cx, GroundingModel, HeadMode, ModelConfig, TextEncoder};
use crate::objectives::optim::{AdamW, AdamWConfig, GradAccumulator};
use crate::refiner::features::{crop_encode, ExtractorKind, FeatureExtractor};
use crate::refiner::loss::{box_grid_map, exo_target, pretrain_loss_var};
use crate::refiner::post::postprocess;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub epochs: usize,
    pub batch: usize,
    pub optim: AdamWConfig,
    pub seed: u64,
    pub flip_prob: f64,
    /// Exocentric partners compared with every egocentric prediction.
    pub partners: usize,
    pub extractor: ExtractorKind,
    pub extractor_seed: u64,
    /// `affordance/object` classes to refine; `None` refines every class.
    pub scope: Option<Vec<String>>,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch: 20,
            optim: AdamWConfig::default(),
            seed: 0,
            flip_prob: 0.5,
            partners: 3,
            extractor: ExtractorKind::default(),
            extractor_seed: 1,
            scope: None,
        }
    }
}

impl RefineConfig {
    pub fn tiny() -> Self {
        Self { epochs: 5, batch: 8, optim: AdamWConfig { lr: 1e-3, encoder_lr: 2e-4, ..Default::default() }, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || self.partners == 0 {
            return Err(Error::Config("refinement epochs, batch and partners must be positive".into()));
        }
        if !(self.optim.lr > 0.0) || self.optim.encoder_lr < 0.0 {
            return Err(Error::Config("refinement learning rates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!("flip probability {} outside [0, 1]", self.flip_prob)));
        }
        Ok(())
    }
}

/// Egocentric training images of the scoped classes. Entries are written
/// `affordance/object`; unknown entries are reported together and an empty
/// list selects nothing.
pub fn resolve_scope<'a>(index: &'a DatasetIndex, scope: Option<&[String]>) -> Result<Vec<&'a Sample>> {
    let Some(scope) = scope else { return Ok(index.ego().collect()) };
    let known: BTreeSet<(String, String)> = index.ego().map(|s| (s.affordance.clone(), s.object.clone())).collect();
    let mut wanted = BTreeSet::new();
    let mut unknown = Vec::new();
    for entry in scope {
        match entry.split_once('/') {
            Some((a, o)) if known.contains(&(a.to_string(), o.to_string())) => {
                wanted.insert((a.to_string(), o.to_string()));
            }
            _ => unknown.push(entry.clone()),
        }
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownScope(unknown));
    }
    Ok(index.ego().filter(|s| wanted.contains(&(s.affordance.clone(), s.object.clone()))).collect())
}

/// One egocentric image with everything its loss needs.
#[derive(Clone, Debug)]
pub struct RefineItem<T> {
    pub id: String,
    pub part: String,
    /// Network input, and its mirror image.
    pub image: ColorImage<T>,
    pub flipped: ColorImage<T>,
    pub height: usize,
    pub width: usize,
    /// Pixel column to auxiliary cells, for the plain and the mirrored
    /// prediction. Both pool in the original frame.
    pub ego_map: Arc<RowMap<T>>,
    pub ego_map_flipped: Arc<RowMap<T>>,
    pub g_ego: Tensor<T>,
    /// Pooled exocentric features of the best partners.
    pub targets: Vec<Vec<T>>,
}

/// Row permutation mirroring an `h × w` column left to right.
pub fn flip_map<T: Scalar>(h: usize, w: usize) -> RowMap<T> {
    let taps = (0..h).flat_map(|y| (0..w).map(move |x| vec![(y * w + (w - 1 - x), T::one())])).collect();
    RowMap::new(h * w, taps)
}

/// Inputs of the refinement stage, prepared once.
pub struct RefineData<T> {
    pub items: Vec<RefineItem<T>>,
}

impl<T: Scalar> RefineData<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn prepare(
        index: &DatasetIndex,
        scoped: &[&Sample],
        objects: &BTreeMap<String, ObjectRegion>,
        pairs: &ExoPairIndex,
        mapping: &PartMapping,
        backends: &Backends,
        extractor: &dyn FeatureExtractor,
        model: &ModelConfig,
        partners: usize,
    ) -> Result<Self> {
        let r = model.resolution;
        let by_id = index.by_id();
        let region = |id: &str| objects.get(id).ok_or_else(|| Error::Invalid(format!("no object box for image {id}")));
        let mut targets_of: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut items = Vec::with_capacity(scoped.len());
        for s in scoped {
            let mut targets = Vec::new();
            for id in pairs.top(s, partners)? {
                if !targets_of.contains_key(id) {
                    let exo = *by_id.get(id).ok_or_else(|| Error::UnknownSample(id.to_string()))?;
                    let reg = region(id)?;
                    let mask = object_mask(exo, reg, backends)?;
                    let g = crop_encode(&ColorImage::from_rgb(&*exo.load_image()?), reg.bbox.rect(), extractor)?;
                    targets_of.insert(id.to_string(), exo_target(&mask, reg.bbox.rect(), &g)?);
                }
                targets.push(targets_of[id].iter().map(|&v| T::lit(v)).collect());
            }
            let rgb = s.load_image()?;
            let (h, w) = (rgb.height() as usize, rgb.width() as usize);
            let native = ColorImage::<f64>::from_rgb(&rgb);
            let b = region(&s.id)?.bbox.rect();
            let g = crop_encode(&native, b, extractor)?;
            let ego_map = box_grid_map::<T>(h, w, b, g.grid);
            let image = ColorImage::<T>::from_rgb(&rgb).resize(r, r);
            items.push(RefineItem {
                id: s.id.clone(),
                part: mapping.lookup(&s.object, &s.affordance)?.to_string(),
                flipped: image.flip_horizontal(),
                image,
                height: h,
                width: w,
                ego_map_flipped: Arc::new(compose(&ego_map, &flip_map(h, w))),
                ego_map: Arc::new(ego_map),
                g_ego: g.features.cast(),
                targets,
            });
        }
        Ok(Self { items })
    }
}

/// Loss of one item; `flip` feeds the mirrored image.
pub fn item_loss<T: Scalar>(model: &GroundingModel<T>, cx: &mut Cx<'_, T>, text: &dyn TextEncoder, item: &RefineItem<T>, flip: bool) -> Result<crate::autograd::Var> {
    let (img, map) = if flip { (&item.flipped, &item.ego_map_flipped) } else { (&item.image, &item.ego_map) };
    let feats = model.encode(cx, img);
    let f_p = model.text_var(cx, text, &item.part)?;
    let q = model.refinement_feature(cx, feats, f_p);
    let logits = model.decode(cx, feats, q);
    let up = upsample_map::<T>(model.config.logit_side(), item.height, item.width);
    let dense = cx.g.row_map(logits, up);
    let m = cx.g.sigmoid(dense);
    pretrain_loss_var(&mut cx.g, m, map, &item.g_ego, &item.targets)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineStep {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct RefineOutcome<T> {
    pub model: GroundingModel<T>,
    pub steps: Vec<RefineStep>,
    /// Mean loss per epoch.
    pub epochs: Vec<f64>,
}

impl<T> RefineOutcome<T> {
    pub fn log_text(&self) -> String {
        self.steps.iter().map(|s| serde_json::to_string(s).expect("loss log serialises") + "\n").collect()
    }
}

pub fn train_refinement<T: Scalar>(model_cfg: &ModelConfig, data: &RefineData<T>, text: &dyn TextEncoder, cfg: &RefineConfig) -> Result<RefineOutcome<T>> {
    cfg.validate()?;
    if data.items.is_empty() {
        return Err(Error::Invalid("no egocentric images to refine".into()));
    }
    let mut model = GroundingModel::<T>::new(model_cfg.clone(), HeadMode::Refinement, Vec::new())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(cfg.optim, model.params.len());
    let trainable = if cfg.optim.encoder_lr > 0.0 { all_trainable } else { heads_only };
    let (mut steps, mut epochs, mut step) = (Vec::new(), Vec::new(), 0);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.items.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut epoch_sum = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let mut acc = GradAccumulator::new(model.params.len());
            let mut sum = 0.0;
            for &i in chunk {
                let flip = rng.random::<f64>() < cfg.flip_prob;
                let mut cx = Cx::new(&model.params, trainable);
                let l = item_loss(&model, &mut cx, text, &data.items[i], flip)?;
                sum += cx.g.value(l).item().as_f64();
                acc.add(&cx.g.backward(l));
            }
            opt.step(&mut model.params, &acc.mean());
            let loss = sum / chunk.len() as f64;
            log::debug!("refine epoch {epoch} step {step}: {loss:.5}");
            steps.push(RefineStep { epoch, step, loss });
            epoch_sum += sum;
            step += 1;
        }
        let mean = epoch_sum / data.items.len() as f64;
        log::info!("refine epoch {epoch}: {mean:.5}");
        epochs.push(mean);
    }
    Ok(RefineOutcome { model, steps, epochs })
}

/// Refined label of one egocentric image.
#[derive(Clone, Debug)]
pub struct RefinedLabel {
    pub id: String,
    pub heatmap: crate::heatmap::HeatmapLabel<f64>,
    pub provenance: Provenance,
    pub mask: BinaryMask,
}

/// Predicts part masks with the trained head and snaps them to segments.
/// Images where no segment qualifies keep their initial label.
pub fn refine_labels<T: Scalar>(
    model: &GroundingModel<T>,
    scoped: &[&Sample],
    objects: &BTreeMap<String, ObjectRegion>,
    initial: &BTreeMap<String, StoredLabel>,
    mapping: &PartMapping,
    backends: &Backends,
    text: &dyn TextEncoder,
) -> Result<Vec<RefinedLabel>> {
    let mut out = Vec::with_capacity(scoped.len());
    for s in scoped {
        let init = initial.get(&s.id).ok_or_else(|| Error::MissingLabels(vec![s.id.clone()]))?;
        let region = objects.get(&s.id).ok_or_else(|| Error::Invalid(format!("no object box for image {}", s.id)))?;
        let rgb = s.load_image()?;
        let pred = model.predict_mask(&rgb, mapping.lookup(&s.object, &s.affordance)?, text)?;
        let m_obj = object_mask(s, region, backends)?;
        let segments = backends.segmenter.auto_segment(BackendImage { id: &s.id, rgb: &rgb })?;
        let post = postprocess(&pred, &m_obj, &segments, &init.heatmap, init.provenance.blur_sigma)?;
        let mask = post.selected.iter().fold(BinaryMask::new(m_obj.height(), m_obj.width()), |acc, &i| acc.union(&segments.regions()[i]));
        let provenance = Provenance { refined_segments: Some(post.selected.len()), refine_fallback: Some(post.fallback_used), ..init.provenance.clone() };
        out.push(RefinedLabel { id: s.id.clone(), heatmap: post.heatmap, provenance, mask });
    }
    Ok(out)
}
