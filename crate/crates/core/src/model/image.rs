//! Planar float images and the patch layout the encoder consumes.

use image::RgbImage;

use crate::grid::{Grid, Rect, SquarePad};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MEAN: [f64; 3] = [0.48145466, 0.4578275, 0.40821073];
const STD: [f64; 3] = [0.26862954, 0.26130258, 0.27577711];

/// RGB image as three `[0, 1]` planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorImage<T> {
    pub planes: [Grid<T>; 3],
}

impl<T: Scalar> ColorImage<T> {
    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let plane = |c: usize| Grid::from_fn(h, w, |y, x| T::lit(img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0));
        Self { planes: [plane(0), plane(1), plane(2)] }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { planes: [Grid::zeros(height, width), Grid::zeros(height, width), Grid::zeros(height, width)] }
    }

    pub fn height(&self) -> usize {
        self.planes[0].height()
    }

    pub fn width(&self) -> usize {
        self.planes[0].width()
    }

    pub fn resize(&self, height: usize, width: usize) -> Self {
        if (height, width) == (self.height(), self.width()) {
            return self.clone();
        }
        Self { planes: self.planes.clone().map(|p| p.resize_bilinear(height, width)) }
    }

    pub fn crop(&self, r: Rect) -> Self {
        Self { planes: self.planes.clone().map(|p| Grid::from_fn(r.height(), r.width(), |y, x| p.get(r.y0 + y, r.x0 + x))) }
    }

    /// Crop `r` and zero-pad it to a centred square.
    pub fn crop_pad_square(&self, r: Rect) -> Self {
        let pad = SquarePad::for_rect(r);
        let mut out = Self::zeros(pad.side, pad.side);
        for (o, p) in out.planes.iter_mut().zip(&self.planes) {
            for y in 0..r.height() {
                for x in 0..r.width() {
                    o.set(pad.pad_top + y, pad.pad_left + x, p.get(r.y0 + y, r.x0 + x));
                }
            }
        }
        out
    }

    pub fn flip_horizontal(&self) -> Self {
        Self { planes: self.planes.clone().map(|p| p.flip_horizontal()) }
    }

    /// Copy `src` into `self` with its top-left corner at `(y0, x0)`.
    pub fn paste(&mut self, src: &Self, y0: usize, x0: usize) {
        for (d, s) in self.planes.iter_mut().zip(&src.planes) {
            for y in 0..s.height() {
                for x in 0..s.width() {
                    d.set(y0 + y, x0 + x, s.get(y, x));
                }
            }
        }
    }

    /// `[patches, 3·p·p]` matrix of normalised pixels, patches in row-major
    /// order and each row laid out channel, then row, then column.
    pub fn patchify(&self, patch: usize) -> Tensor<T> {
        let (gh, gw) = (self.height() / patch, self.width() / patch);
        let mut t = Tensor::zeros(gh * gw, 3 * patch * patch);
        for i in 0..gh {
            for j in 0..gw {
                let row = t.row_mut(i * gw + j);
                let mut k = 0;
                for (c, plane) in self.planes.iter().enumerate() {
                    let (m, s) = (T::lit(MEAN[c]), T::lit(STD[c]));
                    for py in 0..patch {
                        for px in 0..patch {
                            row[k] = (plane.get(i * patch + py, j * patch + px) - m) / s;
                            k += 1;
                        }
                    }
                }
            }
        }
        t
    }

    pub fn to_rgb(&self) -> RgbImage {
        let (h, w) = (self.height(), self.width());
        RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let px = |c: usize| (self.planes[c].get(y as usize, x as usize).as_f64() * 255.0).round().clamp(0.0, 255.0) as u8;
            image::Rgb([px(0), px(1), px(2)])
        })
    }
}
