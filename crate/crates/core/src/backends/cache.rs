//! On-disk memoisation of backend answers.
//!
//! Layout below the cache root:
//!
//! ```text
//! {backend id}/detect/{key}.json     # boxes
//! {backend id}/mask/{key}.pbm        # one binary PBM (P4)
//! {backend id}/segments/{key}.pbm    # concatenated P4 images, one per region
//! ```
//!
//! `key` is the hex SHA-256 of `image id \x1f query \x1f backend id`, where the
//! query is the detection text, `box:x0,y0,x1,y1` for box prompts or `auto`
//! for automatic segmentation. Entries are written atomically, so concurrent
//! readers only ever see complete files.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::backends::types::{BackendImage, DetectionBox, PartDetector, SegmentSet, Segmenter};
use crate::error::{Error, Result};
use crate::grid::BinaryMask;

pub const CACHE_DIR_ENV: &str = "AFFGROUND_CACHE_DIR";

pub fn cache_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(CACHE_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

pub fn cache_key(image_id: &str, query: &str, backend_id: &str) -> String {
    let mut h = Sha256::new();
    h.update(image_id.as_bytes());
    h.update([0x1f]);
    h.update(query.as_bytes());
    h.update([0x1f]);
    h.update(backend_id.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn box_query(b: &DetectionBox) -> String {
    format!("box:{},{},{},{}", b.x0, b.y0, b.x1, b.y1)
}

pub const AUTO_QUERY: &str = "auto";

/// Serialise a mask as binary PBM.
pub fn encode_pbm(mask: &BinaryMask) -> Vec<u8> {
    let (h, w) = mask.shape();
    let mut out = format!("P4\n{w} {h}\n").into_bytes();
    let stride = w.div_ceil(8);
    for y in 0..h {
        let mut row = vec![0u8; stride];
        for x in 0..w {
            if mask.get(y, x) {
                row[x / 8] |= 0x80 >> (x % 8);
            }
        }
        out.extend_from_slice(&row);
    }
    out
}

fn pbm_err(message: impl Into<String>) -> Error {
    Error::Parse { path: PathBuf::from("<pbm>"), message: message.into() }
}

/// Parse a sequence of concatenated P4 images.
pub fn decode_pbm_all(bytes: &[u8]) -> Result<Vec<BinaryMask>> {
    let mut pos = 0;
    let mut out = Vec::new();
    let skip_ws = |pos: &mut usize| {
        while *pos < bytes.len() {
            match bytes[*pos] {
                b'#' => {
                    while *pos < bytes.len() && bytes[*pos] != b'\n' {
                        *pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => *pos += 1,
                _ => break,
            }
        }
    };
    let number = |pos: &mut usize| -> Result<usize> {
        skip_ws(pos);
        let start = *pos;
        while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
            *pos += 1;
        }
        std::str::from_utf8(&bytes[start..*pos]).ok().and_then(|s| s.parse().ok()).ok_or_else(|| pbm_err("bad dimension"))
    };
    loop {
        skip_ws(&mut pos);
        if pos >= bytes.len() {
            break;
        }
        if bytes.get(pos..pos + 2) != Some(b"P4") {
            return Err(pbm_err("missing P4 magic"));
        }
        pos += 2;
        let w = number(&mut pos)?;
        let h = number(&mut pos)?;
        // exactly one whitespace byte separates the header from the raster
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(pbm_err("truncated header"));
        }
        pos += 1;
        let stride = w.div_ceil(8);
        let raster = bytes.get(pos..pos + stride * h).ok_or_else(|| pbm_err("truncated raster"))?;
        pos += stride * h;
        out.push(BinaryMask::from_fn(h, w, |y, x| raster[y * stride + x / 8] & (0x80 >> (x % 8)) != 0));
    }
    Ok(out)
}

pub fn decode_pbm(bytes: &[u8]) -> Result<BinaryMask> {
    let mut all = decode_pbm_all(bytes)?;
    if all.len() != 1 {
        return Err(pbm_err(format!("expected one image, found {}", all.len())));
    }
    Ok(all.remove(0))
}

/// Read/write access to one cache tree.
#[derive(Clone, Debug)]
pub struct CacheStore {
    root: PathBuf,
}

impl CacheStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, backend_id: &str, kind: &str, key: &str, ext: &str) -> PathBuf {
        let safe: String = backend_id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
        self.root.join(safe).join(kind).join(format!("{key}.{ext}"))
    }

    fn read(path: &Path) -> Result<Option<Vec<u8>>> {
        match std::fs::read(path) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn get_boxes(&self, backend_id: &str, image_id: &str, query: &str) -> Result<Option<Vec<DetectionBox>>> {
        let path = self.path(backend_id, "detect", &cache_key(image_id, query, backend_id), "json");
        match Self::read(&path)? {
            Some(b) => serde_json::from_slice(&b).map(Some).map_err(|e| Error::Parse { path, message: e.to_string() }),
            None => Ok(None),
        }
    }

    pub fn put_boxes(&self, backend_id: &str, image_id: &str, query: &str, boxes: &[DetectionBox]) -> Result<()> {
        let path = self.path(backend_id, "detect", &cache_key(image_id, query, backend_id), "json");
        let text = serde_json::to_string(boxes).map_err(|e| Error::Invalid(e.to_string()))?;
        crate::io::write_atomic_str(&path, &text)
    }

    pub fn get_mask(&self, backend_id: &str, image_id: &str, query: &str) -> Result<Option<BinaryMask>> {
        let path = self.path(backend_id, "mask", &cache_key(image_id, query, backend_id), "pbm");
        Self::read(&path)?.map(|b| decode_pbm(&b)).transpose()
    }

    pub fn put_mask(&self, backend_id: &str, image_id: &str, query: &str, mask: &BinaryMask) -> Result<()> {
        let path = self.path(backend_id, "mask", &cache_key(image_id, query, backend_id), "pbm");
        crate::io::write_atomic(&path, &encode_pbm(mask))
    }

    pub fn get_segments(&self, backend_id: &str, image_id: &str) -> Result<Option<Vec<BinaryMask>>> {
        let path = self.path(backend_id, "segments", &cache_key(image_id, AUTO_QUERY, backend_id), "pbm");
        Self::read(&path)?.map(|b| decode_pbm_all(&b)).transpose()
    }

    pub fn put_segments(&self, backend_id: &str, image_id: &str, regions: &[BinaryMask]) -> Result<()> {
        let path = self.path(backend_id, "segments", &cache_key(image_id, AUTO_QUERY, backend_id), "pbm");
        let bytes: Vec<u8> = regions.iter().flat_map(encode_pbm).collect();
        crate::io::write_atomic(&path, &bytes)
    }
}

/// Detector wrapper that consults the cache before the inner backend.
pub struct CachedDetector<D> {
    inner: D,
    store: CacheStore,
}

impl<D: PartDetector> CachedDetector<D> {
    pub fn new(inner: D, store: CacheStore) -> Self {
        Self { inner, store }
    }
}

impl<D: PartDetector> PartDetector for CachedDetector<D> {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn detect(&self, image: BackendImage<'_>, query: &str) -> Result<Vec<DetectionBox>> {
        let id = self.inner.backend_id();
        if let Some(hit) = self.store.get_boxes(id, image.id, query)? {
            return Ok(hit);
        }
        let boxes = self.inner.detect(image, query)?;
        self.store.put_boxes(id, image.id, query, &boxes)?;
        Ok(boxes)
    }
}

pub struct CachedSegmenter<S> {
    inner: S,
    store: CacheStore,
    min_area: usize,
}

impl<S: Segmenter> CachedSegmenter<S> {
    pub fn new(inner: S, store: CacheStore, min_area: usize) -> Self {
        Self { inner, store, min_area }
    }
}

impl<S: Segmenter> Segmenter for CachedSegmenter<S> {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn segment_box(&self, image: BackendImage<'_>, prompt: &DetectionBox) -> Result<BinaryMask> {
        let id = self.inner.backend_id();
        let q = box_query(prompt);
        if let Some(hit) = self.store.get_mask(id, image.id, &q)? {
            return Ok(hit);
        }
        let m = self.inner.segment_box(image, prompt)?;
        self.store.put_mask(id, image.id, &q, &m)?;
        Ok(m)
    }

    fn auto_segment(&self, image: BackendImage<'_>) -> Result<SegmentSet> {
        let id = self.inner.backend_id();
        if let Some(hit) = self.store.get_segments(id, image.id)? {
            return SegmentSet::new(hit, self.min_area);
        }
        let set = self.inner.auto_segment(image)?;
        self.store.put_segments(id, image.id, set.regions())?;
        Ok(set)
    }
}

/// Adapter slot for external detectors and segmenters: answers are read from
/// a cache tree produced offline by those models. A missing entry is reported
/// as an unavailable backend, never as an empty answer.
#[derive(Clone, Debug)]
pub struct PrecomputedBackend {
    store: CacheStore,
    id: String,
    min_area: usize,
}

impl PrecomputedBackend {
    pub fn new(root: impl Into<PathBuf>, id: impl Into<String>, min_area: usize) -> Self {
        Self { store: CacheStore::new(root), id: id.into(), min_area }
    }

    fn missing(&self, what: &str, image_id: &str) -> Error {
        Error::BackendUnavailable { backend: self.id.clone(), message: format!("no precomputed {what} for {image_id}") }
    }
}

impl PartDetector for PrecomputedBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn detect(&self, image: BackendImage<'_>, query: &str) -> Result<Vec<DetectionBox>> {
        self.store.get_boxes(&self.id, image.id, query)?.ok_or_else(|| self.missing("detections", image.id))
    }
}

impl Segmenter for PrecomputedBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn segment_box(&self, image: BackendImage<'_>, prompt: &DetectionBox) -> Result<BinaryMask> {
        self.store.get_mask(&self.id, image.id, &box_query(prompt))?.ok_or_else(|| self.missing("mask", image.id))
    }

    fn auto_segment(&self, image: BackendImage<'_>) -> Result<SegmentSet> {
        let regions = self.store.get_segments(&self.id, image.id)?.ok_or_else(|| self.missing("segments", image.id))?;
        SegmentSet::new(regions.into_iter().filter(|r| r.count() >= self.min_area).collect(), self.min_area)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Rect;
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting(AtomicUsize);

    impl PartDetector for Counting {
        fn backend_id(&self) -> &str {
            "counting"
        }
        fn detect(&self, _: BackendImage<'_>, _: &str) -> Result<Vec<DetectionBox>> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(vec![DetectionBox::new(Rect::new(1, 2, 5, 6), 0.75)])
        }
    }

    #[test]
    fn detector_hits_cache_second_time() {
        let dir = tempfile::tempdir().unwrap();
        let det = CachedDetector::new(Counting(AtomicUsize::new(0)), CacheStore::new(dir.path()));
        let img = image::RgbImage::new(8, 8);
        let bi = BackendImage { id: "a/b", rgb: &img };
        let first = det.detect(bi, "handle").unwrap();
        let second = det.detect(bi, "handle").unwrap();
        assert_eq!(first, second);
        assert_eq!(det.inner.0.load(Ordering::SeqCst), 1);
        det.detect(bi, "blade").unwrap();
        assert_eq!(det.inner.0.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn key_separates_fields() {
        assert_ne!(cache_key("ab", "c", "m"), cache_key("a", "bc", "m"));
        assert_eq!(cache_key("a", "b", "c").len(), 64);
    }

    #[test]
    fn precomputed_missing_is_retriable() {
        let dir = tempfile::tempdir().unwrap();
        let p = PrecomputedBackend::new(dir.path(), "vlpart", 100);
        let img = image::RgbImage::new(8, 8);
        let err = p.detect(BackendImage { id: "x", rgb: &img }, "handle").unwrap_err();
        assert!(err.is_retriable());
        CacheStore::new(dir.path()).put_boxes("vlpart", "x", "handle", &[]).unwrap();
        assert!(p.detect(BackendImage { id: "x", rgb: &img }, "handle").unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn pbm_roundtrip(h in 1usize..20, w in 1usize..20, seed in any::<u64>()) {
            let m = BinaryMask::from_fn(h, w, |y, x| (seed >> ((y * w + x) % 64)) & 1 == 1);
            let other = BinaryMask::from_fn(w, h, |y, x| (y + x) % 3 == 0);
            prop_assert_eq!(decode_pbm(&encode_pbm(&m)).unwrap(), m.clone());
            let both: Vec<u8> = [encode_pbm(&m), encode_pbm(&other)].concat();
            prop_assert_eq!(decode_pbm_all(&both).unwrap(), vec![m, other]);
        }
    }
}
