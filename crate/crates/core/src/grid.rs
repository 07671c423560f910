//! Single-channel spatial grids, binary masks and resampling operators.

use serde::{Deserialize, Serialize};

use crate::autograd::RowMap;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Axis-aligned pixel rectangle, inclusive-exclusive: `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1 && self.x1 <= width && self.y1 <= height
    }

    /// Grow by `margin` on every side, clipped to `[0, width) × [0, height)`.
    pub fn expand(&self, margin: usize, width: usize, height: usize) -> Self {
        Self {
            x0: self.x0.saturating_sub(margin),
            y0: self.y0.saturating_sub(margin),
            x1: (self.x1 + margin).min(width),
            y1: (self.y1 + margin).min(height),
        }
    }

    /// Mirror horizontally inside an image of the given width.
    pub fn flip_horizontal(&self, width: usize) -> Self {
        Self { x0: width - self.x1, y0: self.y0, x1: width - self.x0, y1: self.y1 }
    }

    /// Pixels of the one-pixel-wide ring just inside the rectangle, each once.
    pub fn boundary_ring(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        if self.is_empty() {
            return out;
        }
        for y in self.y0..self.y1 {
            for x in self.x0..self.x1 {
                if y == self.y0 || y + 1 == self.y1 || x == self.x0 || x + 1 == self.x1 {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

/// Row-major `height × width` grid of scalars.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Grid<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![T::zero(); height * width] }
    }

    pub fn filled(height: usize, width: usize, v: T) -> Self {
        Self { height, width, data: vec![v; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!("{height}x{width} grid from {} values", data.len())));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    /// Row-major index of the first maximal element.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { height: self.height, width: self.width, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.height, self.width, |y, x| self.get(y, self.width - 1 - x))
    }

    pub fn cast<U: Scalar>(&self) -> Grid<U> {
        Grid { height: self.height, width: self.width, data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }

    /// As a `[h·w, 1]` column tensor.
    pub fn to_column(&self) -> Tensor<T> {
        Tensor::from_vec(self.data.len(), 1, self.data.clone())
    }

    pub fn from_column(height: usize, width: usize, t: &Tensor<T>) -> Result<Self> {
        Self::from_vec(height, width, t.data().to_vec())
    }

    /// Bilinear resize with half-pixel centres.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Self {
        if (height, width) == self.shape() {
            return self.clone();
        }
        let map = bilinear_map::<T>(self.height, self.width, height, width);
        let out = map.apply(&self.to_column());
        Self { height, width, data: out.into_vec() }
    }

    pub fn resize_area(&self, height: usize, width: usize) -> Self {
        if (height, width) == self.shape() {
            return self.clone();
        }
        let map = area_map::<T>(self.height, self.width, height, width);
        let out = map.apply(&self.to_column());
        Self { height, width, data: out.into_vec() }
    }

    /// Pixels `>= threshold` become 1.
    pub fn binarize(&self, threshold: T) -> BinaryMask {
        BinaryMask { height: self.height, width: self.width, data: self.data.iter().map(|&v| v >= threshold).collect() }
    }

    pub fn support(&self) -> BinaryMask {
        BinaryMask { height: self.height, width: self.width, data: self.data.iter().map(|&v| v > T::zero()).collect() }
    }
}

/// Grid of exact 0/1 values.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![false; height * width] }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![true; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!("{height}x{width} mask from {} values", data.len())));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn from_rect(height: usize, width: usize, r: Rect) -> Self {
        Self::from_fn(height, width, |y, x| r.contains(x, y))
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    fn assert_same_shape(&self, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "mask shape mismatch");
    }

    pub fn union(&self, other: &Self) -> Self {
        self.assert_same_shape(other);
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a || b).collect();
        Self { height: self.height, width: self.width, data }
    }

    pub fn intersect(&self, other: &Self) -> Self {
        self.assert_same_shape(other);
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect();
        Self { height: self.height, width: self.width, data }
    }

    pub fn minus(&self, other: &Self) -> Self {
        self.assert_same_shape(other);
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a && !b).collect();
        Self { height: self.height, width: self.width, data }
    }

    pub fn intersection_count(&self, other: &Self) -> usize {
        self.assert_same_shape(other);
        self.data.iter().zip(&other.data).filter(|(&a, &b)| a && b).count()
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.assert_same_shape(other);
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    /// Pixels outside `r` cleared.
    pub fn restrict_to(&self, r: Rect) -> Self {
        Self::from_fn(self.height, self.width, |y, x| r.contains(x, y) && self.get(y, x))
    }

    pub fn bbox(&self) -> Option<Rect> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        (x0 != usize::MAX).then(|| Rect::new(x0, y0, x1, y1))
    }

    /// Square (Chebyshev) dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> Self {
        let r = radius as isize;
        Self::from_fn(self.height, self.width, |y, x| {
            for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xx) = (y as isize + dy, x as isize + dx);
                    if yy >= 0 && xx >= 0 && (yy as usize) < self.height && (xx as usize) < self.width && self.get(yy as usize, xx as usize) {
                        return true;
                    }
                }
            }
            false
        })
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.height, self.width, |y, x| self.get(y, self.width - 1 - x))
    }

    pub fn to_grid<T: Scalar>(&self) -> Grid<T> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&b| if b { T::one() } else { T::zero() }).collect(),
        }
    }
}

fn linear_taps(src: usize, dst: usize) -> Vec<[(usize, f64); 2]> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            let l = s - i0 as f64;
            [(i0, 1.0 - l), (i1, l)]
        })
        .collect()
}

fn area_taps(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let (lo, hi) = (i as f64 * scale, (i + 1) as f64 * scale);
            let mut taps = Vec::new();
            let mut j = lo.floor() as usize;
            while (j as f64) < hi && j < src {
                let overlap = (hi.min(j as f64 + 1.0) - lo.max(j as f64)).max(0.0);
                if overlap > 0.0 {
                    taps.push((j, overlap / scale));
                }
                j += 1;
            }
            taps
        })
        .collect()
}

fn separable<T: Scalar>(src_w: usize, ys: &[Vec<(usize, f64)>], xs: &[Vec<(usize, f64)>]) -> Vec<Vec<(usize, T)>> {
    let mut out = Vec::with_capacity(ys.len() * xs.len());
    for ty in ys {
        for tx in xs {
            let mut taps: Vec<(usize, T)> = Vec::with_capacity(ty.len() * tx.len());
            for &(sy, wy) in ty {
                for &(sx, wx) in tx {
                    let w = wy * wx;
                    if w == 0.0 {
                        continue;
                    }
                    let j = sy * src_w + sx;
                    match taps.iter_mut().find(|(k, _)| *k == j) {
                        Some((_, acc)) => *acc += T::lit(w),
                        None => taps.push((j, T::lit(w))),
                    }
                }
            }
            out.push(taps);
        }
    }
    out
}

/// Bilinear resampling `src_h×src_w → dst_h×dst_w` (half-pixel centres,
/// edge clamped, no antialiasing).
pub fn bilinear_map<T: Scalar>(src_h: usize, src_w: usize, dst_h: usize, dst_w: usize) -> RowMap<T> {
    let ys: Vec<Vec<(usize, f64)>> = linear_taps(src_h, dst_h).into_iter().map(|t| t.to_vec()).collect();
    let xs: Vec<Vec<(usize, f64)>> = linear_taps(src_w, dst_w).into_iter().map(|t| t.to_vec()).collect();
    RowMap::new(src_h * src_w, separable(src_w, &ys, &xs))
}

/// Exact area-weighted resampling; each output cell is the mean of the source
/// area it covers.
pub fn area_map<T: Scalar>(src_h: usize, src_w: usize, dst_h: usize, dst_w: usize) -> RowMap<T> {
    RowMap::new(src_h * src_w, separable(src_w, &area_taps(src_h, dst_h), &area_taps(src_w, dst_w)))
}

/// Layout of a crop padded to a centred square.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SquarePad {
    pub side: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl SquarePad {
    pub fn for_rect(r: Rect) -> Self {
        let side = r.width().max(r.height());
        Self { side, pad_top: (side - r.height()) / 2, pad_left: (side - r.width()) / 2 }
    }
}

/// Crop `r` out of an `h×w` grid and zero-pad it to a centred square.
pub fn crop_pad_square_map<T: Scalar>(h: usize, w: usize, r: Rect) -> (RowMap<T>, SquarePad) {
    let pad = SquarePad::for_rect(r);
    let mut taps = Vec::with_capacity(pad.side * pad.side);
    for y in 0..pad.side {
        for x in 0..pad.side {
            let (cy, cx) = (y as isize - pad.pad_top as isize, x as isize - pad.pad_left as isize);
            if cy >= 0 && cx >= 0 && (cy as usize) < r.height() && (cx as usize) < r.width() {
                let (sy, sx) = (r.y0 + cy as usize, r.x0 + cx as usize);
                debug_assert!(sy < h && sx < w);
                taps.push(vec![(sy * w + sx, T::one())]);
            } else {
                taps.push(Vec::new());
            }
        }
    }
    (RowMap::new(h * w, taps), pad)
}

/// `second ∘ first`.
pub fn compose<T: Scalar>(second: &RowMap<T>, first: &RowMap<T>) -> RowMap<T> {
    assert_eq!(second.in_rows(), first.out_rows(), "row map composition mismatch");
    let taps = second
        .taps()
        .iter()
        .map(|outer| {
            let mut acc: Vec<(usize, T)> = Vec::new();
            for &(mid, w2) in outer {
                for &(src, w1) in &first.taps()[mid] {
                    match acc.iter_mut().find(|(k, _)| *k == src) {
                        Some((_, a)) => *a += w1 * w2,
                        None => acc.push((src, w1 * w2)),
                    }
                }
            }
            acc
        })
        .collect();
    RowMap::new(first.in_rows(), taps)
}
