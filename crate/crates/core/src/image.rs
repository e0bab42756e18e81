//! Planar floating-point raster.
//!
//! Pixel data is stored channel-major (`data[c*H*W + y*W + x]`) so that
//! per-channel sweeps touch contiguous memory. Values live in [0,1];
//! intermediate residual/detail layers may leave that range and are
//! flagged `unclamped`.

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
    unclamped: bool,
}

impl Image {
    /// Builds an image in [0,1]. Rejects non-finite or out-of-range values.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        Self::build(height, width, channels, data, false)
    }

    /// Builds an intermediate layer whose values may leave [0,1].
    pub fn new_unclamped(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        Self::build(height, width, channels, data, true)
    }

    fn build(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
        unclamped: bool,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::DimensionMismatch(format!(
                "data length {} != {height}x{width}x{channels}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite pixel value".into()));
        }
        if !unclamped && data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidArgument(
                "value outside [0,1] in clamped image".into(),
            ));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
            unclamped,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
            unclamped: false,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }
    pub fn is_unclamped(&self) -> bool {
        self.unclamped
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Contiguous plane of one channel.
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.pixel_count();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.pixel_count();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[c * self.height * self.width + y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[c * self.height * self.width + y * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.channels == other.channels
    }

    /// Contiguous sub-raster copy. The rectangle must lie inside the image.
    pub fn crop(&self, x0: usize, y0: usize, size: usize) -> Result<Image> {
        self.crop_rect(x0, y0, size, size)
    }

    pub fn crop_rect(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if x0 + w > self.width || y0 + h > self.height || w == 0 || h == 0 {
            return Err(Error::InvalidArgument(format!(
                "crop rectangle {w}x{h}@({x0},{y0}) outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * self.channels);
        for c in 0..self.channels {
            let plane = self.channel(c);
            for y in y0..y0 + h {
                data.extend_from_slice(&plane[y * self.width + x0..y * self.width + x0 + w]);
            }
        }
        Ok(Image {
            height: h,
            width: w,
            channels: self.channels,
            data,
            unclamped: self.unclamped,
        })
    }

    /// Seeded random crop position for a `size`-square window.
    pub fn random_crop_pos(&self, size: usize, rng: &mut Rng) -> Result<(usize, usize)> {
        if size > self.width || size > self.height {
            return Err(Error::InvalidArgument(format!(
                "crop size {size} exceeds {}x{} image",
                self.width, self.height
            )));
        }
        let x0 = if self.width == size {
            0
        } else {
            rng.next_below(self.width - size + 1)
        };
        let y0 = if self.height == size {
            0
        } else {
            rng.next_below(self.height - size + 1)
        };
        Ok((x0, y0))
    }

    /// BT.601 full-range RGB -> YUV. Y stays in [0,1]; U and V are chroma
    /// offsets in [-0.5,0.5] stored shifted by +0.5 so the result is a
    /// regular [0,1] image.
    pub fn rgb_to_yuv(&self) -> Result<Image> {
        if self.channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "rgb_to_yuv needs 3 channels, got {}",
                self.channels
            )));
        }
        let n = self.pixel_count();
        let (r, g, b) = (self.channel(0), self.channel(1), self.channel(2));
        let mut data = vec![0.0; 3 * n];
        for i in 0..n {
            let y = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
            let u = 0.5 + 0.5 / (1.0 - 0.114) * (b[i] - y);
            let v = 0.5 + 0.5 / (1.0 - 0.299) * (r[i] - y);
            data[i] = y;
            data[n + i] = u;
            data[2 * n + i] = v;
        }
        // Rounding can graze the [0,1] bounds; keep the result clamped-legal.
        for v in data.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        Image::new(self.height, self.width, 3, data)
    }

    /// Analytic inverse of `rgb_to_yuv`.
    pub fn yuv_to_rgb(&self) -> Result<Image> {
        if self.channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "yuv_to_rgb needs 3 channels, got {}",
                self.channels
            )));
        }
        let n = self.pixel_count();
        let (yp, up, vp) = (self.channel(0), self.channel(1), self.channel(2));
        let mut data = vec![0.0; 3 * n];
        for i in 0..n {
            let y = yp[i];
            let u = up[i] - 0.5;
            let v = vp[i] - 0.5;
            let b = y + u * (1.0 - 0.114) / 0.5;
            let r = y + v * (1.0 - 0.299) / 0.5;
            let g = (y - 0.299 * r - 0.114 * b) / 0.587;
            data[i] = r;
            data[n + i] = g;
            data[2 * n + i] = b;
        }
        Image::new_unclamped(self.height, self.width, 3, data)
    }

    /// Marks the image as allowed to leave [0,1].
    pub fn into_unclamped(mut self) -> Image {
        self.unclamped = true;
        self
    }
}
