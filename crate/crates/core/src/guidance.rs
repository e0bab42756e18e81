//! Guidance maps and binary masks.
//!
//! The guidance map holds the per-pixel edge response
//! `E_i = sum_{j in N(i)} |sum_c (I_ic - I_jc)|` over a 4- (or 8-)
//! neighborhood; missing neighbors at the border are skipped. Binary
//! masks mark important edges, texture points or saliency regions and
//! round-trip through 8-bit gray PNG (0 = unset, 255 = set) so masks
//! produced by external tools plug in directly.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Neighborhood {
    Four,
    Eight,
}

impl Default for Neighborhood {
    fn default() -> Self {
        Neighborhood::Four
    }
}

impl Neighborhood {
    pub fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Neighborhood::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
            Neighborhood::Eight => &[
                (-1, -1),
                (-1, 0),
                (-1, 1),
                (0, -1),
                (0, 1),
                (1, -1),
                (1, 0),
                (1, 1),
            ],
        }
    }
}

/// Per-pixel nonnegative edge response.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceMap {
    height: usize,
    width: usize,
    response: Vec<f64>,
}

impl GuidanceMap {
    pub fn new(height: usize, width: usize, response: Vec<f64>) -> Result<Self> {
        if response.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "guidance length {} != {height}x{width}",
                response.len()
            )));
        }
        if response.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::InvalidArgument(
                "guidance response must be finite and nonnegative".into(),
            ));
        }
        Ok(GuidanceMap {
            height,
            width,
            response,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn response(&self) -> &[f64] {
        &self.response
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.response[y * self.width + x]
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<GuidanceMap> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidArgument("guidance crop out of bounds".into()));
        }
        let mut response = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            response
                .extend_from_slice(&self.response[y * self.width + x0..y * self.width + x0 + w]);
        }
        GuidanceMap::new(h, w, response)
    }
}

/// Binary per-pixel mask with a cached popcount.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
    set_count: usize,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "mask length {} != {height}x{width}",
                bits.len()
            )));
        }
        let set_count = bits.iter().filter(|&&b| b).count();
        Ok(BinaryMask {
            height,
            width,
            bits,
            set_count,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            bits: vec![false; height * width],
            set_count: 0,
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            bits: vec![true; height * width],
            set_count: height * width,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
    /// Number of set bits (N_e when the mask is used as B).
    pub fn set_count(&self) -> usize {
        self.set_count
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn invert(&self) -> BinaryMask {
        let bits: Vec<bool> = self.bits.iter().map(|b| !b).collect();
        BinaryMask {
            height: self.height,
            width: self.width,
            set_count: self.bits.len() - self.set_count,
            bits,
        }
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits
            .iter()
            .zip(&other.bits)
            .all(|(&a, &b)| !a || b)
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<BinaryMask> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidArgument("mask crop out of bounds".into()));
        }
        let mut bits = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            bits.extend_from_slice(&self.bits[y * self.width + x0..y * self.width + x0 + w]);
        }
        BinaryMask::new(h, w, bits)
    }

    pub fn load(path: &Path) -> Result<BinaryMask> {
        let img = io::load_image(path)?;
        let plane = img.channel(0);
        let bits: Vec<bool> = plane.iter().map(|&v| v >= 0.5).collect();
        BinaryMask::new(img.height(), img.width(), bits)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let data: Vec<f64> = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let img = Image::new(self.height, self.width, 1, data)?;
        io::save_image(&img, path)
    }
}

/// Edge response of an image (channel sum inside the absolute value).
pub fn edge_response(img: &Image, neighborhood: Neighborhood) -> GuidanceMap {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut response = vec![0.0; h * w];
    let offsets = neighborhood.offsets();
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for &(dy, dx) in offsets {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || ny as usize >= h || nx as usize >= w {
                    continue; // border pixels sum over existing neighbors only
                }
                let (ny, nx) = (ny as usize, nx as usize);
                let mut d = 0.0;
                for ch in 0..c {
                    d += img.at(y, x, ch) - img.at(ny, nx, ch);
                }
                acc += d.abs();
            }
            response[y * w + x] = acc;
        }
    }
    GuidanceMap {
        height: h,
        width: w,
        response,
    }
}

/// 8-connected component labeling over an arbitrary predicate.
fn components(h: usize, w: usize, member: impl Fn(usize) -> bool) -> (Vec<u32>, Vec<usize>) {
    const UNLABELED: u32 = u32::MAX;
    let mut labels = vec![UNLABELED; h * w];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !member(start) || labels[start] != UNLABELED {
            continue;
        }
        let label = sizes.len() as u32;
        sizes.push(0);
        stack.push(start);
        labels[start] = label;
        while let Some(idx) = stack.pop() {
            sizes[label as usize] += 1;
            let (y, x) = (idx / w, idx % w);
            for &(dy, dx) in Neighborhood::Eight.offsets() {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || ny as usize >= h || nx as usize >= w {
                    continue;
                }
                let nidx = ny as usize * w + nx as usize;
                if member(nidx) && labels[nidx] == UNLABELED {
                    labels[nidx] = label;
                    stack.push(nidx);
                }
            }
        }
    }
    (labels, sizes)
}

/// Hysteresis thresholding (seed at `high`, grow through `low`,
/// 8-connectivity) followed by removal of connected components with
/// fewer than `min_len` pixels. All three knobs are config-exposed.
pub fn detect_important_edges(
    guide: &GuidanceMap,
    high: f64,
    low: f64,
    min_len: usize,
) -> Result<BinaryMask> {
    if !(high >= low && low >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "hysteresis thresholds need high >= low >= 0, got high={high} low={low}"
        )));
    }
    let (h, w) = (guide.height, guide.width);
    let r = &guide.response;
    let (labels, sizes) = components(h, w, |i| r[i] >= low);
    // A weak component survives only if it contains a seed and is long enough.
    let mut keep = vec![false; sizes.len()];
    for i in 0..h * w {
        if r[i] >= high {
            keep[labels[i] as usize] = true;
        }
    }
    let bits: Vec<bool> = (0..h * w)
        .map(|i| {
            r[i] >= low && {
                let l = labels[i] as usize;
                keep[l] && sizes[l] >= min_len
            }
        })
        .collect();
    BinaryMask::new(h, w, bits)
}

/// Texture-point detector: fine-scale repetitive patterns show up as
/// edge pixels with high edge density in their local window. Long
/// connected structures of low mean density are treated as salient
/// contours and excluded even when parts of them are locally dense.
pub fn detect_texture(
    guide: &GuidanceMap,
    window: usize,
    density: f64,
    max_len: usize,
) -> Result<BinaryMask> {
    if window % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "texture window must be odd, got {window}"
        )));
    }
    // Edge pixel = response above a small absolute floor (unit-range images).
    const EDGE_FLOOR: f64 = 0.05;
    let (h, w) = (guide.height, guide.width);
    let r = &guide.response;
    let edge: Vec<bool> = r.iter().map(|&v| v > EDGE_FLOOR).collect();

    // Local edge density via clipped box window.
    let rad = (window / 2) as isize;
    let mut dens = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let y0 = (y as isize - rad).max(0) as usize;
            let y1 = ((y as isize + rad) as usize).min(h - 1);
            let x0 = (x as isize - rad).max(0) as usize;
            let x1 = ((x as isize + rad) as usize).min(w - 1);
            let mut count = 0usize;
            for yy in y0..=y1 {
                for xx in x0..=x1 {
                    if edge[yy * w + xx] {
                        count += 1;
                    }
                }
            }
            dens[y * w + x] = count as f64 / ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64;
        }
    }

    let (labels, sizes) = components(h, w, |i| edge[i]);
    // Mean density per component.
    let mut comp_dens = vec![0.0; sizes.len()];
    for i in 0..h * w {
        if edge[i] {
            comp_dens[labels[i] as usize] += dens[i];
        }
    }
    for (d, &s) in comp_dens.iter_mut().zip(&sizes) {
        *d /= s as f64;
    }

    let bits: Vec<bool> = (0..h * w)
        .map(|i| {
            if !edge[i] || dens[i] <= density {
                return false;
            }
            let l = labels[i] as usize;
            // Long sparse components are structure, not texture.
            !(sizes[l] > max_len && comp_dens[l] <= density)
        })
        .collect();
    BinaryMask::new(h, w, bits)
}

/// Zeroes the response wherever the mask is set.
pub fn mask_guidance(guide: &GuidanceMap, mask: &BinaryMask) -> Result<GuidanceMap> {
    if guide.height != mask.height || guide.width != mask.width {
        return Err(Error::DimensionMismatch(format!(
            "guidance {}x{} vs mask {}x{}",
            guide.width, guide.height, mask.width, mask.height
        )));
    }
    let response: Vec<f64> = guide
        .response
        .iter()
        .zip(&mask.bits)
        .map(|(&v, &m)| if m { 0.0 } else { v })
        .collect();
    Ok(GuidanceMap {
        height: guide.height,
        width: guide.width,
        response,
    })
}

/// Square-structuring-element dilation.
pub fn dilate_mask(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (h, w) = (mask.height, mask.width);
    let r = radius as isize;
    let mut bits = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if !mask.bits[y * w + x] {
                continue;
            }
            let y0 = (y as isize - r).max(0) as usize;
            let y1 = ((y as isize + r) as usize).min(h - 1);
            let x0 = (x as isize - r).max(0) as usize;
            let x1 = ((x as isize + r) as usize).min(w - 1);
            for yy in y0..=y1 {
                for xx in x0..=x1 {
                    bits[yy * w + xx] = true;
                }
            }
        }
    }
    BinaryMask::new(h, w, bits).expect("shape preserved")
}
