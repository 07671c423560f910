//! One function per pipeline stage. Every stage reads the shared config and
//! its predecessors' files under the work directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::backends::{build_backends, Backends};
use crate::config::PipelineConfig;
use crate::data::fixture::FIXTURE_META_FILE;
use crate::data::{generate_fixture, load_dataset, load_part_mapping, DatasetIndex, Fixture, FixtureMeta, PartMapping, Split};
use crate::error::{Error, Result};
use crate::grasp::{load_candidates, select_grasp, GraspCandidate};
use crate::grid::Grid;
use crate::heatmap::HeatmapLabel;
use crate::labeler::{build_pair_index, detect_object_box, encoder_patches, generate_initial_label, object_patchmask, ExoPairIndex, LabelStore, ObjectRegion, PairInput, StoredLabel};
use crate::metrics::{score_predictions, MetricReport};
use crate::model::{build_text_encoder, Checkpoint, GroundingModel, HeadMode, TextEncoder};
use crate::objectives::{train, TrainData, TrainOutcome};
use crate::refiner::{refine_labels, resolve_scope, train_refinement, RefineData, RefineOutcome};
use crate::scalar::Scalar;

/// File layout below the work directory.
#[derive(Clone, Debug)]
pub struct WorkDir {
    pub root: PathBuf,
}

impl WorkDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn labels(&self) -> LabelStore {
        LabelStore::new(self.root.join("labels"))
    }

    pub fn refined_labels(&self) -> LabelStore {
        LabelStore::new(self.root.join("labels_refined"))
    }

    pub fn pairs(&self) -> PathBuf {
        self.root.join("pairs.tsv")
    }

    pub fn checkpoint(&self, seed: u64) -> PathBuf {
        self.root.join("checkpoints").join(format!("seed{seed}.ckpt.json"))
    }

    pub fn loss_log(&self, seed: u64) -> PathBuf {
        self.root.join("logs").join(format!("train_seed{seed}.jsonl"))
    }

    pub fn refine_checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints").join("refine.ckpt.json")
    }

    pub fn refine_log(&self) -> PathBuf {
        self.root.join("logs").join("refine.jsonl")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
}

pub fn work_dir(cfg: &PipelineConfig) -> WorkDir {
    WorkDir::new(&cfg.work_dir)
}

pub fn load_split(cfg: &PipelineConfig, split: Split) -> Result<DatasetIndex> {
    load_dataset(&cfg.data_root, &cfg.setting, split)
}

pub fn load_mapping(cfg: &PipelineConfig) -> Result<PartMapping> {
    load_part_mapping(&cfg.mapping_path())
}

/// Backends from config; fixture geometry is passed along when the dataset
/// root has it.
pub fn load_backends(cfg: &PipelineConfig) -> Result<Backends> {
    let meta_path = cfg.data_root.join(FIXTURE_META_FILE);
    let meta = if meta_path.is_file() { Some(FixtureMeta::load(&cfg.data_root)?) } else { None };
    build_backends(&cfg.backends, meta.as_ref())
}

pub fn load_text(cfg: &PipelineConfig) -> Result<Box<dyn TextEncoder>> {
    build_text_encoder(&cfg.text, cfg.model.dim)
}

pub fn run_fixture(cfg: &PipelineConfig) -> Result<Fixture> {
    let fx = generate_fixture(&cfg.fixture.spec())?;
    fx.write(&cfg.data_root, &cfg.setting)?;
    log::info!("wrote {} images to {}", fx.index.samples.len(), cfg.data_root.display());
    Ok(fx)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub labeled: usize,
    pub degenerate: usize,
    pub objects: usize,
}

/// Initial pseudo labels for every egocentric training image, and object
/// boxes for every training image.
pub fn run_gen_labels(cfg: &PipelineConfig) -> Result<LabelSummary> {
    let index = load_split(cfg, Split::Train)?;
    let mapping = load_mapping(cfg)?;
    let backends = load_backends(cfg)?;
    let store = work_dir(cfg).labels();
    let hash = cfg.hash();
    let mut degenerate = 0;
    let mut labeled = 0;
    for s in index.ego() {
        let mut label = generate_initial_label(s, &mapping, &backends, cfg.blur_sigma)?;
        label.provenance.config_hash = hash.clone();
        degenerate += label.provenance.degenerate as usize;
        store.save(&s.id, &label.heatmap, &label.provenance, &label.raw_masks)?;
        labeled += 1;
    }
    let mut objects = BTreeMap::new();
    for s in &index.samples {
        objects.insert(s.id.clone(), detect_object_box(s, &backends)?);
    }
    store.save_objects(&objects)?;
    if degenerate > 0 {
        log::warn!("{degenerate} of {labeled} labels fell back to uniform");
    }
    Ok(LabelSummary { labeled, degenerate, objects: objects.len() })
}

/// Ranks exocentric partners with the encoder of a freshly initialised
/// model, pooled over the object boxes.
pub fn run_pair(cfg: &PipelineConfig) -> Result<ExoPairIndex> {
    let index = load_split(cfg, Split::Train)?;
    let objects = work_dir(cfg).labels().load_objects()?;
    let model = GroundingModel::<f64>::new(cfg.model.clone(), HeadMode::Grounding, index.affordances())?;
    let grid = cfg.model.grid();
    let input = |s| -> Result<PairInput<'_>> {
        let region = objects_for(&objects, s)?;
        Ok(PairInput { sample: s, features: encoder_patches(&model, s)?, mask: object_patchmask(region, grid) })
    };
    let ego = index.ego().map(input).collect::<Result<Vec<_>>>()?;
    let exo = index.exo().map(input).collect::<Result<Vec<_>>>()?;
    let pairs = build_pair_index(&ego, &exo, cfg.top_n)?;
    pairs.save(&work_dir(cfg).pairs())?;
    Ok(pairs)
}

fn objects_for<'a>(objects: &'a BTreeMap<String, ObjectRegion>, s: &crate::data::Sample) -> Result<&'a ObjectRegion> {
    objects.get(&s.id).ok_or_else(|| Error::Invalid(format!("no object box for {}; rerun gen-labels", s.id)))
}

#[derive(Clone, Debug)]
pub struct RefineSummary<T> {
    pub outcome: RefineOutcome<T>,
    pub refined: usize,
    /// Images that kept their initial label.
    pub kept_initial: usize,
}

/// Trains the refinement head on the scoped classes and writes refined
/// labels for them. An empty scope does nothing.
pub fn run_refine<T: Scalar>(cfg: &PipelineConfig) -> Result<Option<RefineSummary<T>>> {
    let index = load_split(cfg, Split::Train)?;
    let scoped = resolve_scope(&index, cfg.refine.scope.as_deref())?;
    if scoped.is_empty() {
        log::info!("refinement scope is empty; nothing to do");
        return Ok(None);
    }
    let wd = work_dir(cfg);
    let store = wd.labels();
    let objects = store.load_objects()?;
    let pairs = ExoPairIndex::load(&wd.pairs())?;
    let mapping = load_mapping(cfg)?;
    let backends = load_backends(cfg)?;
    let text = load_text(cfg)?;
    let extractor = cfg.refine.extractor.build(&cfg.model, cfg.refine.extractor_seed);
    let data = RefineData::<T>::prepare(&index, &scoped, &objects, &pairs, &mapping, &backends, extractor.as_ref(), &cfg.model, cfg.refine.partners)?;
    let outcome = train_refinement(&cfg.model, &data, text.as_ref(), &cfg.refine)?;
    let hash = cfg.hash();
    Checkpoint::from_model(&outcome.model, &hash).save(&wd.refine_checkpoint())?;
    crate::io::write_atomic_str(&wd.refine_log(), &outcome.log_text())?;
    let initial = store.load_all(scoped.iter().map(|s| s.id.as_str()))?;
    let labels = refine_labels(&outcome.model, &scoped, &objects, &initial, &mapping, &backends, text.as_ref())?;
    let refined_store = wd.refined_labels();
    let mut kept_initial = 0;
    for mut l in labels.iter().cloned() {
        l.provenance.config_hash = hash.clone();
        kept_initial += l.provenance.refine_fallback.unwrap_or(false) as usize;
        refined_store.save(&l.id, &l.heatmap, &l.provenance, std::slice::from_ref(&l.mask))?;
    }
    Ok(Some(RefineSummary { outcome, refined: labels.len(), kept_initial }))
}

/// Training labels: refined where present, initial otherwise.
pub fn training_labels(cfg: &PipelineConfig, index: &DatasetIndex) -> Result<BTreeMap<String, StoredLabel>> {
    let wd = work_dir(cfg);
    let refined = wd.refined_labels();
    let initial = wd.labels();
    let mut out = BTreeMap::new();
    let mut missing = Vec::new();
    for s in index.ego() {
        if refined.contains(&s.id) {
            out.insert(s.id.clone(), refined.load(&s.id)?);
        } else if initial.contains(&s.id) {
            out.insert(s.id.clone(), initial.load(&s.id)?);
        } else {
            missing.push(s.id.clone());
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingLabels(missing));
    }
    Ok(out)
}

/// One model per configured seed; checkpoints and loss logs are written per
/// seed.
pub fn run_train<T: Scalar>(cfg: &PipelineConfig) -> Result<Vec<TrainOutcome<T>>> {
    let index = load_split(cfg, Split::Train)?;
    let wd = work_dir(cfg);
    let labels = training_labels(cfg, &index)?;
    let objects = wd.labels().load_objects()?;
    let pairs = if cfg.train.wants_exo() { Some(ExoPairIndex::load(&wd.pairs())?) } else { None };
    let mapping = load_mapping(cfg)?;
    let text = load_text(cfg)?;
    let data = TrainData::<T>::prepare(&index, &labels, &objects, pairs, &mapping, &cfg.model)?;
    let outcomes = train(&cfg.model, &index.affordances(), &data, text.as_ref(), &cfg.train)?;
    let hash = cfg.hash();
    for o in &outcomes {
        Checkpoint::from_model(&o.model, &hash).save(&wd.checkpoint(o.seed))?;
        crate::io::write_atomic_str(&wd.loss_log(o.seed), &o.log_text())?;
    }
    Ok(outcomes)
}

/// Loads a checkpoint, refusing one written under a different config unless
/// `allow_mismatch` is set.
pub fn load_checkpoint<T: Scalar>(cfg: &PipelineConfig, path: &Path, allow_mismatch: bool) -> Result<GroundingModel<T>> {
    let ckpt = Checkpoint::load(path)?;
    let current = cfg.hash();
    if ckpt.config_hash != current {
        if !allow_mismatch {
            return Err(Error::ConfigMismatch { artifact: ckpt.config_hash, current });
        }
        log::warn!("{} was written under config {}, current is {current}", path.display(), ckpt.config_hash);
    }
    ckpt.to_model()
}

#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub reports: Vec<(PathBuf, MetricReport)>,
    /// Mean over checkpoints when there are several.
    pub mean: Option<MetricReport>,
}

/// Scores every checkpoint on the egocentric test images and writes one
/// report per checkpoint, plus their mean.
pub fn run_eval<T: Scalar>(cfg: &PipelineConfig, checkpoints: &[PathBuf], allow_mismatch: bool) -> Result<EvalSummary> {
    if checkpoints.is_empty() {
        return Err(Error::Invalid("eval needs at least one checkpoint".into()));
    }
    let index = load_split(cfg, Split::Test)?;
    let text = load_text(cfg)?;
    let out_dir = work_dir(cfg).reports();
    let hash = cfg.hash();
    let mut reports = Vec::new();
    for path in checkpoints {
        let model = load_checkpoint::<T>(cfg, path, allow_mismatch)?;
        let mut preds = Vec::new();
        for s in index.ego() {
            let img = s.load_image()?;
            let h = model.predict_heatmap(&img, &s.affordance, text.as_ref(), img.height() as usize, img.width() as usize)?;
            preds.push((s, h.cast::<f64>()));
        }
        let mut report = score_predictions(preds, &index.gt_heatmaps)?;
        report.config_hash = Some(hash.clone());
        write_report(&out_dir, &report_stem(path), &report)?;
        reports.push((path.clone(), report));
    }
    let mean = if reports.len() > 1 {
        let m = MetricReport::mean(&reports.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>())?;
        write_report(&out_dir, "mean", &m)?;
        Some(m)
    } else {
        None
    };
    Ok(EvalSummary { reports, mean })
}

fn report_stem(path: &Path) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("checkpoint");
    name.strip_suffix(".ckpt.json").or_else(|| name.strip_suffix(".json")).unwrap_or(name).to_string()
}

fn write_report(dir: &Path, stem: &str, r: &MetricReport) -> Result<()> {
    crate::io::write_atomic_str(&dir.join(format!("{stem}.txt")), &r.to_text())?;
    crate::io::write_atomic_str(&dir.join(format!("{stem}.toml")), &r.to_key_values())?;
    crate::io::write_json(&dir.join(format!("{stem}.json")), r)
}

/// Heatmap with full-precision values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapFile {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

/// Writes JSON for a `.json` path and an 8-bit PNG otherwise.
pub fn save_heatmap(path: &Path, h: &HeatmapLabel<f64>) -> Result<()> {
    let (height, width) = h.shape();
    if path.extension().is_some_and(|e| e == "json") {
        crate::io::write_json(path, &HeatmapFile { height, width, data: h.data().to_vec() })
    } else {
        crate::io::save_gray_png(path, width as u32, height as u32, h.to_gray8())
    }
}

pub fn load_heatmap(path: &Path) -> Result<HeatmapLabel<f64>> {
    if path.extension().is_some_and(|e| e == "json") {
        let f: HeatmapFile = crate::io::read_json(path)?;
        HeatmapLabel::normalize(Grid::from_vec(f.height, f.width, f.data)?)
    } else {
        let img = crate::io::load_gray(path)?;
        HeatmapLabel::from_gray8(img.height() as usize, img.width() as usize, img.as_raw())
    }
}

/// The image tinted red in proportion to the heatmap.
pub fn render_overlay(img: &RgbImage, h: &HeatmapLabel<f64>) -> Result<RgbImage> {
    let (hh, ww) = h.shape();
    if (hh, ww) != (img.height() as usize, img.width() as usize) {
        return Err(Error::ShapeMismatch(format!("heatmap {hh}x{ww} does not match image {}x{}", img.height(), img.width())));
    }
    let max = h.grid().max().max(f64::MIN_POSITIVE);
    let mut out = img.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        let a = 0.6 * h.get(y as usize, x as usize) / max;
        let tint = [255.0, 0.0, 0.0];
        for c in 0..3 {
            px.0[c] = ((1.0 - a) * px.0[c] as f64 + a * tint[c]).round() as u8;
        }
    }
    Ok(out)
}

/// Heatmap for one image and affordance at the image's own size.
pub fn run_predict<T: Scalar>(
    cfg: &PipelineConfig,
    checkpoint: &Path,
    image: &Path,
    query: &str,
    out: &Path,
    overlay: Option<&Path>,
    allow_mismatch: bool,
) -> Result<HeatmapLabel<f64>> {
    let model = load_checkpoint::<T>(cfg, checkpoint, allow_mismatch)?;
    let text = load_text(cfg)?;
    let img = crate::io::load_rgb(image)?;
    let h = model.predict_heatmap(&img, query, text.as_ref(), img.height() as usize, img.width() as usize)?.cast::<f64>();
    save_heatmap(out, &h)?;
    if let Some(p) = overlay {
        crate::io::save_rgb_png(p, &render_overlay(&img, &h)?)?;
    }
    Ok(h)
}

pub fn run_grasp_select(heatmap: &Path, candidates: &Path) -> Result<GraspCandidate> {
    let h = load_heatmap(heatmap)?;
    let c = load_candidates(candidates)?;
    select_grasp(&h, &c).cloned()
}
