//! Self-describing checkpoint files: JSON with a format tag, a version, the
//! model config and every named tensor.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::{HeadMode, ModelConfig};
use crate::model::network::GroundingModel;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "affground-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub mode: HeadMode,
    pub model: ModelConfig,
    pub affordances: Vec<String>,
    /// Hash of the pipeline config that produced the weights.
    pub config_hash: String,
    /// Values stored as `f64` regardless of the training precision.
    pub tensors: BTreeMap<String, Tensor<f64>>,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &GroundingModel<T>, config_hash: &str) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            mode: model.mode,
            model: model.config.clone(),
            affordances: model.affordances.clone(),
            config_hash: config_hash.into(),
            tensors: model.params.entries().iter().map(|e| (e.name.clone(), e.value.cast())).collect(),
        }
    }

    pub fn to_model<T: Scalar>(&self) -> Result<GroundingModel<T>> {
        let mut m = GroundingModel::new(self.model.clone(), self.mode, self.affordances.clone())?;
        let named: BTreeMap<String, Tensor<T>> = self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect();
        if named.len() != m.params.len() {
            return Err(Error::Checkpoint(format!("checkpoint has {} tensors, model expects {}", named.len(), m.params.len())));
        }
        m.params.load_from(&named)?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        crate::io::write_atomic_str(path, &text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::io::read_to_string(path)?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: not a checkpoint ({e})", path.display())))?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(CHECKPOINT_FORMAT) => {}
            other => return Err(Error::Checkpoint(format!("{}: unknown checkpoint format {other:?}", path.display()))),
        }
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_VERSION as u64 => {}
            other => return Err(Error::Checkpoint(format!("{}: unsupported checkpoint version {other:?}", path.display()))),
        }
        serde_json::from_value(value).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_through_disk() {
        let m = GroundingModel::<f32>::new(ModelConfig::tiny(), HeadMode::Grounding, vec!["hold".into()]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.json");
        Checkpoint::from_model(&m, "abc").save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back.config_hash, "abc");
        let m2: GroundingModel<f32> = back.to_model().unwrap();
        for (a, b) in m.params.entries().iter().zip(m2.params.entries()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn foreign_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        std::fs::write(&p, r#"{"format": "something-else", "version": 1}"#).unwrap();
        assert!(matches!(Checkpoint::load(&p), Err(Error::Checkpoint(_))));
        std::fs::write(&p, "not json").unwrap();
        assert!(matches!(Checkpoint::load(&p), Err(Error::Checkpoint(_))));
    }
}
