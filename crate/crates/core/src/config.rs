//! The shared pipeline config: one TOML file plus `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::BackendConfig;
use crate::data::FixtureSpec;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TextConfig};
use crate::objectives::TrainConfig;
use crate::refiner::RefineConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// Synthetic dataset parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureConfig {
    pub seed: u64,
    pub n_objects: usize,
    pub n_affordances: usize,
    pub ego_per_class: usize,
    pub exo_per_class: usize,
    pub test_per_class: usize,
    pub size: usize,
    pub gt_sigma: f64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        let s = FixtureSpec::new(0, 3, 2);
        Self {
            seed: s.seed,
            n_objects: s.n_objects,
            n_affordances: s.n_affordances,
            ego_per_class: s.ego_per_class,
            exo_per_class: s.exo_per_class,
            test_per_class: s.test_per_class,
            size: s.size,
            gt_sigma: s.gt_sigma,
        }
    }
}

impl FixtureConfig {
    pub fn spec(&self) -> FixtureSpec {
        FixtureSpec {
            seed: self.seed,
            n_objects: self.n_objects,
            n_affordances: self.n_affordances,
            ego_per_class: self.ego_per_class,
            exo_per_class: self.exo_per_class,
            test_per_class: self.test_per_class,
            size: self.size,
            gt_sigma: self.gt_sigma,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Dataset root; the setting directory sits below it.
    pub data_root: PathBuf,
    pub setting: String,
    /// Labels, pairs, checkpoints and reports go here.
    pub work_dir: PathBuf,
    /// Part mapping file; defaults to the one a fixture writes into the root.
    pub mapping: Option<PathBuf>,
    pub precision: Precision,
    pub blur_sigma: f64,
    /// Exocentric partners kept per egocentric image.
    pub top_n: usize,
    pub fixture: FixtureConfig,
    pub model: ModelConfig,
    pub text: TextConfig,
    pub backends: BackendConfig,
    pub train: TrainConfig,
    pub refine: RefineConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data_root: "data".into(),
            setting: "Seen".into(),
            work_dir: "work".into(),
            mapping: None,
            precision: Precision::default(),
            blur_sigma: 1.0,
            top_n: crate::labeler::DEFAULT_TOP_N,
            fixture: FixtureConfig::default(),
            model: ModelConfig::tiny(),
            text: TextConfig::default(),
            backends: BackendConfig::default(),
            train: TrainConfig::default(),
            refine: RefineConfig::default(),
        }
    }
}

/// Sets `dotted.key` in a TOML table. The value is read as TOML and kept as a
/// bare string when that fails, so `setting=Unseen` needs no quotes.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let (key, raw) = (key.trim(), raw.trim());
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::Config(format!("empty key in override `{assignment}`")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl PipelineConfig {
    /// Desk-scale preset: tiny model and schedules on a fixture large enough
    /// for five epochs to learn from.
    pub fn tiny() -> Self {
        Self {
            fixture: FixtureConfig { ego_per_class: 20, test_per_class: 6, ..Default::default() },
            train: TrainConfig::tiny(),
            refine: RefineConfig::tiny(),
            ..Default::default()
        }
    }

    /// Reads the file (defaults when `None`) and applies the overrides in
    /// order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = crate::io::read_to_string(p)?;
                toml::from_str::<toml::Table>(&text).map_err(|e| Error::Parse { path: p.to_path_buf(), message: e.to_string() })?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.refine.validate()?;
        if !(self.blur_sigma >= 0.0) {
            return Err(Error::Config(format!("blur_sigma {} must be non-negative", self.blur_sigma)));
        }
        if self.top_n == 0 {
            return Err(Error::Config("top_n must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 over everything that shapes the artifacts. Directory
    /// locations and the list of training seeds are left out, so moving the
    /// work directory or evaluating a subset of seeds keeps the hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.data_root = PathBuf::new();
        c.work_dir = PathBuf::new();
        c.train.seeds.clear();
        let json = serde_json::to_string(&c).expect("config serialises");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn mapping_path(&self) -> PathBuf {
        self.mapping.clone().unwrap_or_else(|| self.data_root.join(crate::data::fixture::FIXTURE_MAPPING_FILE))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_and_roundtrip() {
        let cfg = PipelineConfig::load(None, &["train.epochs=3".into(), "setting=Unseen".into(), "train.seeds=[1, 10]".into(), "refine.scope=[\"hold/cup\"]".into()]).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.setting, "Unseen");
        assert_eq!(cfg.train.seeds, vec![1, 10]);
        assert_eq!(cfg.refine.scope, Some(vec!["hold/cup".to_string()]));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, cfg.to_toml()).unwrap();
        assert_eq!(PipelineConfig::load(Some(&p), &[]).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values() {
        assert!(matches!(PipelineConfig::load(None, &["train.epoch=3".into()]), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::load(None, &["nonsense".into()]), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::load(None, &["train.epochs=0".into()]), Err(Error::Config(_))));
    }

    #[test]
    fn shipped_tiny_config_is_the_preset() {
        let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.toml");
        assert_eq!(PipelineConfig::load(Some(&p), &[]).unwrap(), PipelineConfig::tiny());
    }

    #[test]
    fn hash_tracks_content_not_locations() {
        let a = PipelineConfig::default();
        let b = PipelineConfig { work_dir: "elsewhere".into(), train: TrainConfig { seeds: vec![5], ..a.train.clone() }, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let c = PipelineConfig { blur_sigma: 2.0, ..a.clone() };
        assert_ne!(a.hash(), c.hash());
    }
}
