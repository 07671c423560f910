//! Directory-backed dataset index.
//!
//! Layout, relative to the dataset root:
//!
//! ```text
//! {setting}/{trainset|testset}/{egocentric|exocentric}/{affordance}/{object}/{file}.png
//! {setting}/testset/GT/{affordance}/{object}/{file}.png     # 8-bit ground truth
//! ```
//!
//! A sample id is the path below `{setting}/` without extension, e.g.
//! `trainset/egocentric/hold/knife/knife_ego_0000`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use crate::data::sample::{ImageSource, Sample, Split, View, MIN_IMAGE_SIDE};
use crate::error::{Error, Result};
use crate::heatmap::HeatmapLabel;

pub const GT_DIR: &str = "GT";
const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

/// Files that could not be turned into samples.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub skipped: Vec<PathBuf>,
}

impl LoadReport {
    pub fn warnings(&self) -> usize {
        self.skipped.len()
    }
}

#[derive(Clone, Debug, Default)]
pub struct DatasetIndex {
    pub samples: Vec<Sample>,
    pub gt_heatmaps: BTreeMap<String, HeatmapLabel<f64>>,
    pub report: LoadReport,
}

impl DatasetIndex {
    pub fn new(samples: Vec<Sample>, gt_heatmaps: BTreeMap<String, HeatmapLabel<f64>>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Invalid(format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(Self { samples, gt_heatmaps, report: LoadReport::default() })
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn by_id(&self) -> BTreeMap<&str, &Sample> {
        self.samples.iter().map(|s| (s.id.as_str(), s)).collect()
    }

    pub fn view(&self, view: View) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.view == view)
    }

    pub fn ego(&self) -> impl Iterator<Item = &Sample> {
        self.view(View::Ego)
    }

    pub fn exo(&self) -> impl Iterator<Item = &Sample> {
        self.view(View::Exo)
    }

    /// Distinct `(object, affordance)` pairs, sorted.
    pub fn class_pairs(&self) -> Vec<(String, String)> {
        let set: BTreeSet<(String, String)> = self.samples.iter().map(|s| (s.object.clone(), s.affordance.clone())).collect();
        set.into_iter().collect()
    }

    /// Sorted affordance vocabulary.
    pub fn affordances(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.samples.iter().map(|s| s.affordance.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn objects(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.samples.iter().map(|s| s.object.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn merge(mut self, other: DatasetIndex) -> Result<Self> {
        self.samples.extend(other.samples);
        self.gt_heatmaps.extend(other.gt_heatmaps);
        self.report.skipped.extend(other.report.skipped);
        let report = self.report;
        let mut out = Self::new(self.samples, self.gt_heatmaps)?;
        out.report = report;
        Ok(out)
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn name_of(p: &Path) -> Option<&str> {
    p.file_name().and_then(|n| n.to_str())
}

/// Walk `view_dir/{affordance}/{object}/{file}`; anything off that shape is
/// recorded as skipped.
fn walk_view(view_dir: &Path, split: Split, view: View, report: &mut LoadReport, samples: &mut Vec<Sample>) -> Result<()> {
    for aff_dir in sorted_entries(view_dir)? {
        let Some(affordance) = name_of(&aff_dir).filter(|_| aff_dir.is_dir()).map(str::to_string) else {
            report.skipped.push(aff_dir);
            continue;
        };
        for obj_dir in sorted_entries(&aff_dir)? {
            let Some(object) = name_of(&obj_dir).filter(|_| obj_dir.is_dir()).map(str::to_string) else {
                report.skipped.push(obj_dir);
                continue;
            };
            for file in sorted_entries(&obj_dir)? {
                let stem = file.file_stem().and_then(|s| s.to_str()).map(str::to_string);
                let ok_dims = is_image(&file)
                    && file.is_file()
                    && image::image_dimensions(&file).map(|(w, h)| w >= MIN_IMAGE_SIDE && h >= MIN_IMAGE_SIDE).unwrap_or(false);
                match stem {
                    Some(stem) if ok_dims => {
                        let id = format!("{}/{}/{affordance}/{object}/{stem}", split.dir_name(), view.dir_name());
                        samples.push(Sample::new(id, ImageSource::File(file), view, &object, &affordance, split)?);
                    }
                    _ => report.skipped.push(file),
                }
            }
        }
    }
    Ok(())
}

/// Index one split of one setting (e.g. `Seen`) below `root`.
pub fn load_dataset(root: &Path, setting: &str, split: Split) -> Result<DatasetIndex> {
    if !root.is_dir() {
        return Err(Error::MissingRoot(root.to_path_buf()));
    }
    let split_dir = root.join(setting).join(split.dir_name());
    if !split_dir.is_dir() {
        return Err(Error::MissingRoot(split_dir));
    }
    let mut report = LoadReport::default();
    let mut samples = Vec::new();
    for view in [View::Ego, View::Exo] {
        let dir = split_dir.join(view.dir_name());
        if dir.is_dir() {
            walk_view(&dir, split, view, &mut report, &mut samples)?;
        }
    }
    let mut gt = BTreeMap::new();
    if split == Split::Test {
        for s in samples.iter().filter(|s| s.view == View::Ego) {
            let ImageSource::File(path) = &s.image else { continue };
            let stem = path.file_stem().and_then(|x| x.to_str()).unwrap_or_default();
            let gt_path = split_dir.join(GT_DIR).join(&s.affordance).join(&s.object).join(format!("{stem}.png"));
            if !gt_path.is_file() {
                continue;
            }
            let img = crate::io::load_gray(&gt_path)?;
            let map = HeatmapLabel::from_gray8(img.height() as usize, img.width() as usize, img.as_raw())
                .map_err(|_| Error::DegenerateGroundTruth(s.id.clone()))?;
            gt.insert(s.id.clone(), map);
        }
    }
    let mut index = DatasetIndex::new(samples, gt)?;
    index.report = report;
    if index.report.warnings() > 0 {
        log::warn!("skipped {} unparseable entries under {}", index.report.warnings(), split_dir.display());
    }
    Ok(index)
}

/// Write an index (images, ground truth) into the directory layout above.
/// Samples backed by files are copied as-is.
pub fn write_dataset(index: &DatasetIndex, root: &Path, setting: &str) -> Result<()> {
    let base = root.join(setting);
    for s in &index.samples {
        let path = base.join(format!("{}.png", s.id));
        match &s.image {
            ImageSource::Memory(img) => crate::io::save_rgb_png(&path, img)?,
            ImageSource::File(src) => {
                let bytes = std::fs::read(src).map_err(|e| Error::io(src, e))?;
                crate::io::write_atomic(&path, &bytes)?;
            }
        }
        if let Some(gt) = index.gt_heatmaps.get(&s.id) {
            let stem = s.id.rsplit('/').next().unwrap_or(&s.id);
            let gt_path = base
                .join(s.split.dir_name())
                .join(GT_DIR)
                .join(&s.affordance)
                .join(&s.object)
                .join(format!("{stem}.png"));
            let (h, w) = gt.shape();
            crate::io::save_gray_png(&gt_path, w as u32, h as u32, gt.to_gray8())?;
        }
    }
    Ok(())
}
