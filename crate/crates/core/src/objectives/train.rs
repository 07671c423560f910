//! The grounding training loop.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{RowMap, Var};
use crate::data::{DatasetIndex, PartMapping};
use crate::error::{Error, Result};
use crate::grid::BinaryMask;
use crate::heatmap::HeatmapLabel;
use crate::labeler::{object_patchmask, ExoPairIndex, ObjectRegion, StoredLabel};
use crate::model::network::upsample_map;
use crate::model::params::{all_trainable, heads_only};
use crate::model::{ColorImage, Cx, GroundingModel, HeadMode, ModelConfig, TextEncoder};
use crate::objectives::augment::{augment_ego, AugmentOptions};
use crate::objectives::losses::{align_loss_var, exo_cls_loss_var, kl_loss_var, reason_loss_var, LossReport, ReasonPairing};
use crate::objectives::optim::{AdamW, AdamWConfig, GradAccumulator};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub optim: AdamWConfig,
    pub seeds: Vec<u64>,
    pub augment: AugmentOptions,
    pub margin: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub use_align: bool,
    pub use_exo_cls: bool,
    pub use_reason: bool,
    /// Compare the part output with the object name and the object output
    /// with the part name.
    pub reason_swapped_targets: bool,
    /// Loss weight of samples whose pseudo label is the uniform fallback.
    pub degenerate_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch: 20,
            optim: AdamWConfig::default(),
            seeds: vec![0],
            augment: AugmentOptions::default(),
            margin: 0.1,
            lambda1: 10.0,
            lambda2: 1.0,
            use_align: true,
            use_exo_cls: true,
            use_reason: true,
            reason_swapped_targets: false,
            degenerate_weight: 1.0,
        }
    }
}

impl TrainConfig {
    /// Settings for the tiny model on fixtures. Five epochs from a random
    /// encoder leave no room for stitching or a heavily weighted alignment
    /// term, so both are turned down here.
    pub fn tiny() -> Self {
        Self {
            epochs: 5,
            batch: 1,
            optim: AdamWConfig { lr: 3e-3, encoder_lr: 2e-4, ..Default::default() },
            augment: AugmentOptions { stitch_prob: 0.0, ..Default::default() },
            lambda1: 1.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.optim.lr > 0.0) || self.optim.encoder_lr < 0.0 {
            return bad(format!("learning rates must be positive (lr {}, encoder lr {})", self.optim.lr, self.optim.encoder_lr));
        }
        if !(0.0..=1.0).contains(&self.augment.stitch_prob) || !(0.0..=1.0).contains(&self.augment.flip_prob) {
            return bad("augmentation probabilities must lie in [0, 1]".into());
        }
        if self.epochs == 0 || self.batch == 0 {
            return bad("epochs and batch must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.degenerate_weight < 0.0 {
            return bad("loss weights must be non-negative".into());
        }
        Ok(())
    }

    pub fn wants_exo(&self) -> bool {
        self.lambda1 > 0.0 && (self.use_align || self.use_exo_cls)
    }

    pub fn wants_reason(&self) -> bool {
        self.lambda2 > 0.0 && self.use_reason
    }
}

/// Egocentric training image resized to the network resolution.
#[derive(Clone, Debug)]
pub struct EgoItem<T> {
    pub id: String,
    pub object: String,
    pub affordance: String,
    pub part: String,
    pub image: ColorImage<T>,
    pub label: HeatmapLabel<T>,
    pub degenerate: bool,
}

#[derive(Clone, Debug)]
pub struct ExoItem<T> {
    pub image: ColorImage<T>,
    /// Object patches on the encoder grid.
    pub mask: BinaryMask,
}

/// Everything the loop reads, prepared once.
#[derive(Clone, Debug)]
pub struct TrainData<T> {
    pub ego: Vec<EgoItem<T>>,
    pub exo: BTreeMap<String, ExoItem<T>>,
    pub pairs: Option<ExoPairIndex>,
}

impl<T: Scalar> TrainData<T> {
    /// Fails listing every training egocentric id without a label.
    pub fn prepare(
        index: &DatasetIndex,
        labels: &BTreeMap<String, StoredLabel>,
        objects: &BTreeMap<String, ObjectRegion>,
        pairs: Option<ExoPairIndex>,
        mapping: &PartMapping,
        model: &ModelConfig,
    ) -> Result<Self> {
        let r = model.resolution;
        let missing: Vec<String> = index.ego().filter(|s| !labels.contains_key(&s.id)).map(|s| s.id.clone()).collect();
        if !missing.is_empty() {
            return Err(Error::MissingLabels(missing));
        }
        let mut ego = Vec::new();
        for s in index.ego() {
            let l = &labels[&s.id];
            ego.push(EgoItem {
                id: s.id.clone(),
                object: s.object.clone(),
                affordance: s.affordance.clone(),
                part: mapping.lookup(&s.object, &s.affordance)?.to_string(),
                image: ColorImage::from_rgb(&*s.load_image()?).resize(r, r),
                label: l.heatmap.resize(r, r)?.cast(),
                degenerate: l.provenance.degenerate,
            });
        }
        let mut exo = BTreeMap::new();
        if pairs.is_some() {
            for s in index.exo() {
                let region = objects.get(&s.id).ok_or_else(|| Error::Invalid(format!("no object box for exocentric image {}", s.id)))?;
                exo.insert(s.id.clone(), ExoItem { image: ColorImage::from_rgb(&*s.load_image()?).resize(r, r), mask: object_patchmask(region, model.grid()) });
            }
        }
        Ok(Self { ego, exo, pairs })
    }
}

/// Network inputs of one (augmented) training sample.
#[derive(Clone, Debug)]
pub struct SampleInputs<'a, T> {
    pub image: ColorImage<T>,
    pub label: HeatmapLabel<T>,
    pub affordance: &'a str,
    /// Exocentric partner; `None` skips the alignment terms.
    pub exo: Option<&'a ExoItem<T>>,
    /// `(object, part)` names; `None` skips the reasoning term.
    pub reason: Option<(&'a str, &'a str)>,
    pub weight: f64,
}

/// Masked average over the rows of `patches` selected by `mask`.
pub fn masked_pool<T: Scalar>(cx: &mut Cx<'_, T>, patches: Var, mask: &BinaryMask) -> Result<Var> {
    let n = mask.count();
    if n == 0 {
        return Err(Error::EmptyPooling);
    }
    let w = T::one() / T::from_usize_lossy(n);
    let taps = vec![mask.data().iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| (i, w)).collect()];
    Ok(cx.g.row_map(patches, Arc::new(RowMap::new(mask.data().len(), taps))))
}

/// Total loss node and its components for one sample.
pub fn sample_loss<T: Scalar>(
    model: &GroundingModel<T>,
    cx: &mut Cx<'_, T>,
    text: &dyn TextEncoder,
    cfg: &TrainConfig,
    up: &Arc<RowMap<T>>,
    x: &SampleInputs<'_, T>,
) -> Result<(Var, LossReport)> {
    let feats = model.encode(cx, &x.image);
    let f_t = model.text_var(cx, text, x.affordance)?;
    let (f_a, reason) = model.affordance_feature(cx, feats, f_t)?;
    let logits = model.decode(cx, feats, f_a);
    let dense = cx.g.row_map(logits, up.clone());
    let pred = cx.g.softmax_all(dense);
    let kl = kl_loss_var(&mut cx.g, pred, x.label.data());
    let mut total = kl;
    let value = |cx: &Cx<'_, T>, v: Var| cx.g.value(v).item().as_f64();
    let (mut l_align, mut l_exo) = (0.0, 0.0);
    if let Some(exo) = x.exo.filter(|_| cfg.wants_exo()) {
        let ef = model.encode(cx, &exo.image);
        let f_e = masked_pool(cx, ef.patches, &exo.mask)?;
        let mut terms = Vec::new();
        if cfg.use_align {
            let a = align_loss_var(&mut cx.g, f_a, f_e, T::lit(cfg.margin))?;
            l_align = value(cx, a);
            terms.push(a);
        }
        if cfg.use_exo_cls {
            let logits = model.exo_logits(cx, f_e)?;
            let e = exo_cls_loss_var(&mut cx.g, logits, model.affordance_index(x.affordance)?)?;
            l_exo = value(cx, e);
            terms.push(e);
        }
        let mut s = terms[0];
        for &t in &terms[1..] {
            s = cx.g.add(s, t);
        }
        let s = cx.g.scale(s, T::lit(cfg.lambda1));
        total = cx.g.add(total, s);
    }
    let mut l_reason = 0.0;
    if let (Some((object, part)), Some(rv), true) = (x.reason, reason, cfg.wants_reason()) {
        let emb = |q: &str| -> Result<Vec<T>> { Ok(text.embed(q)?.into_iter().map(T::lit).collect()) };
        let pairing = ReasonPairing { swapped: cfg.reason_swapped_targets };
        let r = reason_loss_var(&mut cx.g, rv.f_part, rv.f_obj, &emb(object)?, &emb(part)?, pairing)?;
        l_reason = value(cx, r);
        let r = cx.g.scale(r, T::lit(cfg.lambda2));
        total = cx.g.add(total, r);
    }
    if x.weight != 1.0 {
        total = cx.g.scale(total, T::lit(x.weight));
    }
    let report = LossReport::combine(value(cx, kl), l_align, l_exo, l_reason, cfg.lambda1, cfg.lambda2);
    Ok((total, report))
}

/// One line of the loss log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    #[serde(flatten)]
    pub losses: LossReport,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub seed: u64,
    pub model: GroundingModel<T>,
    pub steps: Vec<StepLog>,
    /// Mean report per epoch.
    pub epochs: Vec<LossReport>,
}

impl<T> TrainOutcome<T> {
    /// JSON lines, one per step.
    pub fn log_text(&self) -> String {
        self.steps.iter().map(|s| serde_json::to_string(s).expect("loss log serialises") + "\n").collect()
    }
}

/// Trains one model per seed. Each run draws from its own generator, so runs
/// are independent and repeatable.
pub fn train<T: Scalar>(
    model_cfg: &ModelConfig,
    affordances: &[String],
    data: &TrainData<T>,
    text: &dyn TextEncoder,
    cfg: &TrainConfig,
) -> Result<Vec<TrainOutcome<T>>> {
    cfg.validate()?;
    if data.ego.is_empty() {
        return Err(Error::Invalid("no egocentric training images".into()));
    }
    if cfg.wants_exo() && data.pairs.is_none() {
        return Err(Error::Config("alignment terms are enabled but no pair index was given".into()));
    }
    cfg.seeds.iter().map(|&seed| train_seed(model_cfg, affordances, data, text, cfg, seed)).collect()
}

fn train_seed<T: Scalar>(
    model_cfg: &ModelConfig,
    affordances: &[String],
    data: &TrainData<T>,
    text: &dyn TextEncoder,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome<T>> {
    let mut model = GroundingModel::<T>::new(model_cfg.clone(), HeadMode::Grounding, affordances.to_vec())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = AdamW::new(cfg.optim, model.params.len());
    let side = model_cfg.resolution;
    let up = upsample_map::<T>(model_cfg.logit_side(), side, side);
    let trainable = if cfg.optim.encoder_lr > 0.0 { all_trainable } else { heads_only };
    // distractors come from other affordances
    let pools: BTreeMap<&str, Vec<&ColorImage<T>>> = data
        .ego
        .iter()
        .map(|e| (e.affordance.as_str(), data.ego.iter().filter(|o| o.affordance != e.affordance).map(|o| &o.image).collect()))
        .collect();
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.ego.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut epoch_reports = Vec::new();
        for chunk in order.chunks(cfg.batch) {
            let mut acc = GradAccumulator::new(model.params.len());
            let mut reports = Vec::new();
            for &i in chunk {
                let item = &data.ego[i];
                let aug = augment_ego(&item.image, &item.label, side, &cfg.augment, &pools[item.affordance.as_str()], &mut rng)?;
                let partner = match &data.pairs {
                    Some(p) => {
                        let id = p.draw(&item.id, &item.object, &item.affordance, &mut rng)?;
                        Some(data.exo.get(id).ok_or_else(|| Error::UnknownSample(id.to_string()))?)
                    }
                    None => None,
                };
                let unstitched = aug.quadrant.is_none();
                let inputs = SampleInputs {
                    image: aug.image,
                    label: aug.label,
                    affordance: &item.affordance,
                    exo: partner.filter(|_| unstitched),
                    reason: unstitched.then_some((item.object.as_str(), item.part.as_str())),
                    weight: if item.degenerate { cfg.degenerate_weight } else { 1.0 },
                };
                let mut cx = Cx::new(&model.params, trainable);
                let (loss, report) = sample_loss(&model, &mut cx, text, cfg, &up, &inputs)?;
                acc.add(&cx.g.backward(loss));
                reports.push(report);
            }
            opt.step(&mut model.params, &acc.mean());
            let mean = LossReport::mean(&reports, cfg.lambda1, cfg.lambda2);
            log::debug!("seed {seed} epoch {epoch} step {step}: kl {:.5} total {:.5}", mean.l_kl, mean.l_total);
            steps.push(StepLog { epoch, step, losses: mean });
            epoch_reports.extend(reports);
            step += 1;
        }
        let mean = LossReport::mean(&epoch_reports, cfg.lambda1, cfg.lambda2);
        log::info!("seed {seed} epoch {epoch}: kl {:.5} total {:.5}", mean.l_kl, mean.l_total);
        epochs.push(mean);
    }
    Ok(TrainOutcome { seed, model, steps, epochs })
}
