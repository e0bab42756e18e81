//! Dense 4-D tensor in (n, c, h, w) layout.
//!
//! Batch size is 1 throughout this crate, so a (1, c, h, w) tensor has
//! exactly the same memory layout as the planar [`Image`]; conversions
//! are plain copies.

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::DimensionMismatch(format!(
                "tensor data length {} != {n}x{c}x{h}x{w}",
                data.len()
            )));
        }
        Ok(Tensor { n, c, h, w, data })
    }

    pub fn from_image(img: &Image) -> Self {
        Tensor {
            n: 1,
            c: img.channels(),
            h: img.height(),
            w: img.width(),
            data: img.data().to_vec(),
        }
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }
    pub fn channels(&self) -> usize {
        self.c
    }
    pub fn height(&self) -> usize {
        self.h
    }
    pub fn width(&self) -> usize {
        self.w
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Contiguous (h*w) plane of channel `c` in batch item 0.
    pub fn plane(&self, c: usize) -> &[f64] {
        let sz = self.h * self.w;
        &self.data[c * sz..(c + 1) * sz]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let sz = self.h * self.w;
        &mut self.data[c * sz..(c + 1) * sz]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.h + y) * self.w + x] = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_layout_matches() {
        let img = Image::new(2, 3, 3, (0..18).map(|i| i as f64 / 18.0).collect()).unwrap();
        let t = Tensor::from_image(&img);
        assert_eq!(t.shape(), (1, 3, 2, 3));
        assert_eq!(t.data(), img.data());
        assert_eq!(t.at(1, 1, 2), img.at(1, 2, 1));
    }

    #[test]
    fn bad_length_rejected() {
        assert!(Tensor::from_vec(1, 1, 2, 2, vec![0.0; 3]).is_err());
    }
}
