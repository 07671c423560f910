//! Part detection and promptable segmentation behind named plugins.

pub mod cache;
pub mod heuristics;
pub mod mock;
pub mod types;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use cache::{CacheStore, CachedDetector, CachedSegmenter, PrecomputedBackend, CACHE_DIR_ENV};
pub use heuristics::{background_sanity_fix, filter_boxes, SanityFix};
pub use mock::{MockBackend, MockOptions};
pub use types::{BackendImage, DetectionBox, PartDetector, SegmentSet, Segmenter};

use crate::data::fixture::FixtureMeta;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    /// `mock` or `precomputed`.
    pub detector: String,
    pub segmenter: String,
    pub mock: MockOptions,
    /// Root of the offline answer tree for `precomputed`.
    pub precomputed_dir: Option<PathBuf>,
    pub precomputed_detector_id: String,
    pub precomputed_segmenter_id: String,
    /// Cache root; falls back to the environment variable when unset.
    pub cache_dir: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            detector: "mock".into(),
            segmenter: "mock".into(),
            mock: MockOptions::default(),
            precomputed_dir: None,
            precomputed_detector_id: "detector".into(),
            precomputed_segmenter_id: "segmenter".into(),
            cache_dir: None,
        }
    }
}

/// A detector and segmenter pair resolved from config.
pub struct Backends {
    pub detector: Box<dyn PartDetector>,
    pub segmenter: Box<dyn Segmenter>,
}

fn mock_for(meta: Option<&FixtureMeta>, cfg: &BackendConfig) -> Result<MockBackend> {
    let meta = meta.ok_or_else(|| Error::BackendUnavailable {
        backend: "mock".into(),
        message: "the mock backend needs fixture metadata next to the dataset".into(),
    })?;
    Ok(MockBackend::new(meta, cfg.mock.clone()))
}

fn precomputed(cfg: &BackendConfig, id: &str) -> Result<PrecomputedBackend> {
    let dir = cfg.precomputed_dir.clone().ok_or_else(|| Error::Config("precomputed backend needs precomputed_dir".into()))?;
    Ok(PrecomputedBackend::new(dir, id, cfg.mock.min_area))
}

fn with_cache_det<D: PartDetector + 'static>(d: D, cache: &Option<CacheStore>) -> Box<dyn PartDetector> {
    match cache {
        Some(c) => Box::new(CachedDetector::new(d, c.clone())),
        None => Box::new(d),
    }
}

fn with_cache_seg<S: Segmenter + 'static>(s: S, cache: &Option<CacheStore>, min_area: usize) -> Box<dyn Segmenter> {
    match cache {
        Some(c) => Box::new(CachedSegmenter::new(s, c.clone(), min_area)),
        None => Box::new(s),
    }
}

/// Resolve backends by name. Mock answers are only cached when the mock
/// options are the defaults, because the cache key carries the backend id only.
pub fn build_backends(cfg: &BackendConfig, meta: Option<&FixtureMeta>) -> Result<Backends> {
    let cache = cfg.cache_dir.clone().or_else(cache::cache_dir_from_env).map(CacheStore::new);
    let mock_cache = if cfg.mock == MockOptions::default() { cache.clone() } else { None };
    let detector = match cfg.detector.as_str() {
        "mock" => with_cache_det(mock_for(meta, cfg)?, &mock_cache),
        "precomputed" => Box::new(precomputed(cfg, &cfg.precomputed_detector_id)?) as Box<dyn PartDetector>,
        other => return Err(Error::UnknownBackend(other.to_string())),
    };
    let segmenter = match cfg.segmenter.as_str() {
        "mock" => with_cache_seg(mock_for(meta, cfg)?, &mock_cache, cfg.mock.min_area),
        "precomputed" => Box::new(precomputed(cfg, &cfg.precomputed_segmenter_id)?) as Box<dyn Segmenter>,
        other => return Err(Error::UnknownBackend(other.to_string())),
    };
    Ok(Backends { detector, segmenter })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_backend_name() {
        let cfg = BackendConfig { detector: "owlvit".into(), ..Default::default() };
        assert!(matches!(build_backends(&cfg, None), Err(Error::UnknownBackend(_))));
    }

    #[test]
    fn mock_without_fixture_is_unavailable() {
        let err = build_backends(&BackendConfig::default(), None).err().unwrap();
        assert!(err.is_retriable());
    }
}
