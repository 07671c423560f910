//! The frozen auxiliary encoder applied to square object crops.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Rect;
use crate::model::encoder::VisionEncoder;
use crate::model::params::{frozen, Group, Init};
use crate::model::{ColorImage, Cx, ModelConfig, ParamStore};
use crate::tensor::Tensor;

/// Crops are resized to this side before encoding.
pub const CROP_SIDE: usize = 224;
pub const CROP_PATCH: usize = 16;
/// Boxes smaller than this many pixels are rejected.
pub const MIN_CROP_AREA: usize = 4;

pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &str;

    /// Side of the output feature grid.
    fn grid(&self) -> usize;

    /// `[grid², d]` features of a `CROP_SIDE × CROP_SIDE` image.
    fn extract(&self, img: &ColorImage<f64>) -> Result<Tensor<f64>>;
}

/// A ViT with fixed weights reading 224 px crops as 14×14 patches.
#[derive(Clone, Debug)]
pub struct FrozenVit {
    params: ParamStore<f64>,
    encoder: VisionEncoder,
}

impl FrozenVit {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Self {
        let mut params = ParamStore::new();
        let grid = CROP_SIDE / CROP_PATCH;
        let mut init = Init::new(&mut params, seed);
        init.set_group(Group::Encoder);
        let encoder = VisionEncoder::new(&mut init, "aux", CROP_PATCH, grid * grid, cfg.width, cfg.depth, cfg.heads, cfg.mlp_ratio, cfg.dim);
        Self { params, encoder }
    }
}

impl FeatureExtractor for FrozenVit {
    fn name(&self) -> &str {
        "frozen-vit"
    }

    fn grid(&self) -> usize {
        CROP_SIDE / CROP_PATCH
    }

    fn extract(&self, img: &ColorImage<f64>) -> Result<Tensor<f64>> {
        check_side(img)?;
        let mut cx = Cx::new(&self.params, frozen);
        let f = self.encoder.forward(&mut cx, &img.patchify(CROP_PATCH));
        Ok(cx.g.value(f.patches).clone())
    }
}

/// Mean colour and spread per patch, centred on mid-grey.
#[derive(Clone, Copy, Debug, Default)]
pub struct PatchColor;

impl FeatureExtractor for PatchColor {
    fn name(&self) -> &str {
        "patch-color"
    }

    fn grid(&self) -> usize {
        CROP_SIDE / CROP_PATCH
    }

    fn extract(&self, img: &ColorImage<f64>) -> Result<Tensor<f64>> {
        check_side(img)?;
        let g = self.grid();
        let n = (CROP_PATCH * CROP_PATCH) as f64;
        let mut t = Tensor::zeros(g * g, 6);
        for i in 0..g {
            for j in 0..g {
                let row = t.row_mut(i * g + j);
                for (c, plane) in img.planes.iter().enumerate() {
                    let (mut s, mut s2) = (0.0, 0.0);
                    for y in 0..CROP_PATCH {
                        for x in 0..CROP_PATCH {
                            let v = plane.get(i * CROP_PATCH + y, j * CROP_PATCH + x);
                            s += v;
                            s2 += v * v;
                        }
                    }
                    let mean = s / n;
                    row[c] = mean - 0.5;
                    row[3 + c] = (s2 / n - mean * mean).max(0.0).sqrt();
                }
            }
        }
        Ok(t)
    }
}

fn check_side(img: &ColorImage<f64>) -> Result<()> {
    if (img.height(), img.width()) != (CROP_SIDE, CROP_SIDE) {
        return Err(Error::ShapeMismatch(format!("auxiliary encoder expects {CROP_SIDE}x{CROP_SIDE}, got {}x{}", img.height(), img.width())));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractorKind {
    #[default]
    FrozenVit,
    PatchColor,
}

impl ExtractorKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "frozen-vit" => Ok(Self::FrozenVit),
            "patch-color" => Ok(Self::PatchColor),
            other => Err(Error::Config(format!("unknown auxiliary encoder `{other}` (expected frozen-vit or patch-color)"))),
        }
    }

    pub fn build(self, cfg: &ModelConfig, seed: u64) -> Box<dyn FeatureExtractor> {
        match self {
            Self::FrozenVit => Box::new(FrozenVit::new(cfg, seed)),
            Self::PatchColor => Box::new(PatchColor),
        }
    }
}

/// Feature grid of one object crop.
#[derive(Clone, Debug, PartialEq)]
pub struct CroppedFeature {
    pub grid: usize,
    /// `[grid², d]`.
    pub features: Tensor<f64>,
}

/// Crop the box, zero-pad it to a centred square, resize and encode.
pub fn crop_encode(image: &ColorImage<f64>, b: Rect, enc: &dyn FeatureExtractor) -> Result<CroppedFeature> {
    if b.area() < MIN_CROP_AREA {
        return Err(Error::DegenerateCrop(b.area()));
    }
    if !b.fits_in(image.width(), image.height()) {
        return Err(Error::Invalid(format!("box {b:?} outside the {}x{} image", image.width(), image.height())));
    }
    let sq = image.crop_pad_square(b).resize(CROP_SIDE, CROP_SIDE);
    Ok(CroppedFeature { grid: enc.grid(), features: enc.extract(&sq)? })
}
