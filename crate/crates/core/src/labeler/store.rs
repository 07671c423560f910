//! On-disk label sets: one 8-bit PNG per sample plus a JSON sidecar.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::backends::cache::encode_pbm;
use crate::error::{Error, Result};
use crate::grid::BinaryMask;
use crate::heatmap::HeatmapLabel;
use crate::labeler::initial::{ObjectRegion, Provenance};

pub const OBJECTS_FILE: &str = "objects.json";

#[derive(Clone, Debug)]
pub struct LabelStore {
    root: PathBuf,
}

#[derive(Clone, Debug)]
pub struct StoredLabel {
    pub heatmap: HeatmapLabel<f64>,
    pub provenance: Provenance,
}

impl LabelStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn png(&self, id: &str) -> PathBuf {
        self.root.join(format!("{id}.png"))
    }

    fn sidecar(&self, id: &str) -> PathBuf {
        self.root.join(format!("{id}.json"))
    }

    pub fn save(&self, id: &str, heatmap: &HeatmapLabel<f64>, provenance: &Provenance, raw_masks: &[BinaryMask]) -> Result<()> {
        let (h, w) = heatmap.shape();
        crate::io::save_gray_png(&self.png(id), w as u32, h as u32, heatmap.to_gray8())?;
        if !raw_masks.is_empty() {
            let bytes: Vec<u8> = raw_masks.iter().flat_map(encode_pbm).collect();
            crate::io::write_atomic(&self.root.join(format!("{id}.masks.pbm")), &bytes)?;
        }
        crate::io::write_json(&self.sidecar(id), provenance)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.png(id).is_file() && self.sidecar(id).is_file()
    }

    pub fn load(&self, id: &str) -> Result<StoredLabel> {
        let img = crate::io::load_gray(&self.png(id))?;
        let heatmap = HeatmapLabel::from_gray8(img.height() as usize, img.width() as usize, img.as_raw())?;
        let provenance = crate::io::read_json(&self.sidecar(id))?;
        Ok(StoredLabel { heatmap, provenance })
    }

    /// Loads every id, reporting all missing ones in a single error.
    pub fn load_all<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<BTreeMap<String, StoredLabel>> {
        let mut out = BTreeMap::new();
        let mut missing = Vec::new();
        for id in ids {
            if self.contains(id) {
                out.insert(id.to_string(), self.load(id)?);
            } else {
                missing.push(id.to_string());
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingLabels(missing));
        }
        Ok(out)
    }

    pub fn save_objects(&self, objects: &BTreeMap<String, ObjectRegion>) -> Result<()> {
        crate::io::write_json(&self.root.join(OBJECTS_FILE), objects)
    }

    pub fn load_objects(&self) -> Result<BTreeMap<String, ObjectRegion>> {
        crate::io::read_json(&self.root.join(OBJECTS_FILE))
    }
}
