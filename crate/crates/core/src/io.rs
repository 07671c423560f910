//! File helpers: atomic writes and 8-bit image I/O.

use std::io::Write;
use std::path::Path;

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};

/// Write `bytes` to `path` through a temp file in the same directory and a
/// rename, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_atomic_str(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn encode_png(img: &image::DynamicImage, path: &Path) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })?;
    Ok(buf.into_inner())
}

pub fn save_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    let bytes = encode_png(&image::DynamicImage::ImageRgb8(img.clone()), path)?;
    write_atomic(path, &bytes)
}

pub fn save_gray_png(path: &Path, width: u32, height: u32, pixels: Vec<u8>) -> Result<()> {
    let img = GrayImage::from_raw(width, height, pixels)
        .ok_or_else(|| Error::Image { path: path.to_path_buf(), message: "pixel buffer size mismatch".into() })?;
    let bytes = encode_png(&image::DynamicImage::ImageLuma8(img), path)?;
    write_atomic(path, &bytes)
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })?;
    Ok(img.to_rgb8())
}

pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })?;
    Ok(img.to_luma8())
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<S: serde::Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Invalid(e.to_string()))?;
    write_atomic_str(path, &text)
}

pub fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })
}
