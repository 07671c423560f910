//! Normalised heatmaps and the mask → heatmap conversion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Grid};
use crate::scalar::Scalar;

/// Tolerance on `|sum − 1|` for a valid heatmap.
pub const SUM_TOLERANCE: f64 = 1e-6;

/// Nonnegative grid summing to one: pseudo labels, predictions and ground
/// truth all share this type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapLabel<T> {
    grid: Grid<T>,
}

impl<T: Scalar> HeatmapLabel<T> {
    /// Validates the invariants without rescaling.
    pub fn new(grid: Grid<T>) -> Result<Self> {
        let sum = grid.sum().as_f64();
        if grid.min() < T::zero() || grid.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("heatmap has negative or non-finite values".into()));
        }
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Invalid(format!("heatmap sums to {sum}")));
        }
        Ok(Self { grid })
    }

    /// Divides by the total mass. Fails on zero mass or negative values.
    pub fn normalize(grid: Grid<T>) -> Result<Self> {
        if grid.min() < T::zero() || grid.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("heatmap has negative or non-finite values".into()));
        }
        let s = grid.sum();
        if s <= T::zero() {
            return Err(Error::EmptyLabel);
        }
        Ok(Self { grid: grid.map(|v| v / s) })
    }

    pub fn uniform(height: usize, width: usize) -> Self {
        let v = T::one() / T::from_usize_lossy(height * width);
        Self { grid: Grid::filled(height, width, v) }
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn into_grid(self) -> Grid<T> {
        self.grid
    }

    pub fn shape(&self) -> (usize, usize) {
        self.grid.shape()
    }

    pub fn data(&self) -> &[T] {
        self.grid.data()
    }

    pub fn get(&self, y: usize, x: usize) -> T {
        self.grid.get(y, x)
    }

    /// Bilinear resize followed by renormalisation.
    pub fn resize(&self, height: usize, width: usize) -> Result<Self> {
        if self.shape() == (height, width) {
            return Ok(self.clone());
        }
        Self::normalize(self.grid.resize_bilinear(height, width).map(|v| v.max(T::zero())))
    }

    pub fn flip_horizontal(&self) -> Self {
        Self { grid: self.grid.flip_horizontal() }
    }

    pub fn cast<U: Scalar>(&self) -> HeatmapLabel<U> {
        HeatmapLabel { grid: self.grid.cast() }
    }

    /// 8-bit encoding scaled so the maximum maps to 255. Nonzero cells are
    /// stored as at least 1 so the support survives quantisation.
    pub fn to_gray8(&self) -> Vec<u8> {
        let max = self.grid.max();
        self.grid
            .data()
            .iter()
            .map(|&v| {
                if v <= T::zero() || max <= T::zero() {
                    0
                } else {
                    let q = (v / max * T::lit(255.0)).round().as_f64();
                    q.clamp(1.0, 255.0) as u8
                }
            })
            .collect()
    }

    pub fn from_gray8(height: usize, width: usize, pixels: &[u8]) -> Result<Self> {
        let grid = Grid::from_vec(height, width, pixels.iter().map(|&p| T::lit(p as f64)).collect())?;
        Self::normalize(grid)
    }
}

/// Normalised 1-D Gaussian kernel of radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur; out-of-grid taps read the nearest edge pixel so
/// constant grids stay constant.
pub fn gaussian_blur<T: Scalar>(g: &Grid<T>, sigma: f64) -> Grid<T> {
    let k: Vec<T> = gaussian_kernel(sigma).into_iter().map(T::lit).collect();
    if k.len() == 1 {
        return g.clone();
    }
    let r = (k.len() / 2) as isize;
    let (h, w) = g.shape();
    let horiz = Grid::from_fn(h, w, |y, x| {
        let mut acc = T::zero();
        for (i, &kv) in k.iter().enumerate() {
            let xx = (x as isize + i as isize - r).clamp(0, w as isize - 1);
            acc += kv * g.get(y, xx as usize);
        }
        acc
    });
    Grid::from_fn(h, w, |y, x| {
        let mut acc = T::zero();
        for (i, &kv) in k.iter().enumerate() {
            let yy = (y as isize + i as isize - r).clamp(0, h as isize - 1);
            acc += kv * horiz.get(yy as usize, x);
        }
        acc
    })
}

/// Blur a binary mask and normalise it into a heatmap.
pub fn mask_to_heatmap<T: Scalar>(mask: &BinaryMask, blur_sigma: f64) -> Result<HeatmapLabel<T>> {
    if mask.is_empty() {
        return Err(Error::EmptyLabel);
    }
    let blurred = gaussian_blur(&mask.to_grid::<T>(), blur_sigma);
    HeatmapLabel::normalize(blurred)
}

/// Resize the mask bilinearly to `height × width`, binarise at 0.5, then
/// blur and normalise.
pub fn mask_to_heatmap_at<T: Scalar>(mask: &BinaryMask, blur_sigma: f64, height: usize, width: usize) -> Result<HeatmapLabel<T>> {
    if mask.shape() == (height, width) {
        return mask_to_heatmap(mask, blur_sigma);
    }
    let resized = mask.to_grid::<T>().resize_bilinear(height, width).binarize(T::lit(0.5));
    mask_to_heatmap(&resized, blur_sigma)
}

/// Support radius of the blur kernel in pixels.
pub fn blur_radius(sigma: f64) -> usize {
    if sigma <= 0.0 {
        0
    } else {
        (3.0 * sigma).ceil() as usize
    }
}
