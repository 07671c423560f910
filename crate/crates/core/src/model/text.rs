//! Frozen text-embedding providers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;

    /// Embedding of `query`; identical strings always map to identical
    /// vectors.
    fn embed(&self, query: &str) -> Result<Vec<f64>>;
}

/// Deterministic table: each string seeds its own Gaussian draw, then the
/// vector is scaled to unit length.
#[derive(Clone, Debug)]
pub struct HashTextEncoder {
    dim: usize,
    seed: u64,
}

impl HashTextEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }
}

impl TextEncoder for HashTextEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, query: &str) -> Result<Vec<f64>> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(query.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(v.into_iter().map(|x| x / n).collect())
    }
}

/// Pre-extracted features read from a JSON object `{ "text": [f, ...] }`.
#[derive(Clone, Debug)]
pub struct TableTextEncoder {
    dim: usize,
    table: BTreeMap<String, Vec<f64>>,
}

impl TableTextEncoder {
    pub fn load(path: &Path, dim: usize) -> Result<Self> {
        let table: BTreeMap<String, Vec<f64>> = crate::io::read_json(path)?;
        for (k, v) in &table {
            if v.len() != dim {
                return Err(Error::Parse { path: path.to_path_buf(), message: format!("feature for `{k}` has {} values, expected {dim}", v.len()) });
            }
        }
        Ok(Self { dim, table })
    }
}

impl TextEncoder for TableTextEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, query: &str) -> Result<Vec<f64>> {
        self.table.get(query).cloned().ok_or_else(|| Error::Invalid(format!("no text feature for `{query}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextConfig {
    /// `hash` or `table`.
    pub provider: String,
    pub seed: u64,
    pub table: Option<PathBuf>,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self { provider: "hash".into(), seed: 17, table: None }
    }
}

pub fn build_text_encoder(cfg: &TextConfig, dim: usize) -> Result<Box<dyn TextEncoder>> {
    match cfg.provider.as_str() {
        "hash" => Ok(Box::new(HashTextEncoder::new(dim, cfg.seed))),
        "table" => {
            let path = cfg.table.as_ref().ok_or_else(|| Error::Config("table text provider needs a table path".into()))?;
            Ok(Box::new(TableTextEncoder::load(path, dim)?))
        }
        other => Err(Error::Config(format!("unknown text provider `{other}`"))),
    }
}
