//! Shared helpers for the integration suites: deterministic image
//! generators and a deliberately naive re-implementation of the energy
//! used as an independent oracle. The oracle is written straight from
//! the definitions (double loops, no caching, no fast paths) so that any
//! disagreement points at the production code.

#![allow(dead_code)]

use smoothlab_core::energy::EnergyParams;
use smoothlab_core::{BinaryMask, Image, Rng};

/// Uniform random image in [0,1].
pub fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
    let mut rng = Rng::new(seed);
    let data = (0..h * w * c).map(|_| rng.next_f64()).collect();
    Image::new(h, w, c, data).unwrap()
}

/// Random mask with the given set-bit density.
pub fn random_mask(h: usize, w: usize, density: f64, seed: u64) -> BinaryMask {
    let mut rng = Rng::new(seed);
    let bits = (0..h * w).map(|_| rng.next_f64() < density).collect();
    BinaryMask::new(h, w, bits).unwrap()
}

/// Vertical step edge (left = `lo`, right = `hi`) with clamped additive
/// Gaussian noise. The step sits between columns w/2 - 1 and w/2.
pub fn noisy_step_edge(h: usize, w: usize, lo: f64, hi: f64, sigma: f64, seed: u64) -> Image {
    let mut rng = Rng::new(seed);
    let mut data = vec![0.0; h * w * 3];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let base = if x < w / 2 { lo } else { hi };
                let v = base + sigma * rng.next_normal();
                data[c * h * w + y * w + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    Image::new(h, w, 3, data).unwrap()
}

/// Synthetic photo-like test image: a smooth ramp, a few soft blobs and
/// a rectangle, plus mild noise.
pub fn synthetic_scene(size: usize, noise: f64, seed: u64) -> Image {
    let mut rng = Rng::new(seed);
    let mut data = vec![0.0; size * size * 3];
    let gx: Vec<f64> = (0..3).map(|_| rng.next_f64() - 0.5).collect();
    let gy: Vec<f64> = (0..3).map(|_| rng.next_f64() - 0.5).collect();
    let base: Vec<f64> = (0..3).map(|_| 0.25 + 0.5 * rng.next_f64()).collect();
    // Rectangle with a per-channel offset.
    let rx = rng.next_below(size / 2);
    let ry = rng.next_below(size / 2);
    let rw = size / 4 + rng.next_below(size / 4);
    let rh = size / 4 + rng.next_below(size / 4);
    let roff: Vec<f64> = (0..3).map(|_| 0.6 * (rng.next_f64() - 0.5)).collect();
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                let fx = x as f64 / size as f64;
                let fy = y as f64 / size as f64;
                let mut v = base[c] + gx[c] * fx + gy[c] * fy;
                if x >= rx && x < rx + rw && y >= ry && y < ry + rh {
                    v += roff[c];
                }
                v += noise * rng.next_normal();
                data[c * size * size + y * size + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    Image::new(size, size, 3, data).unwrap()
}

/// Piecewise-constant scene: flat base colors with one offset rectangle,
/// plus clamped additive Gaussian noise.
pub fn flat_scene(size: usize, noise: f64, seed: u64) -> Image {
    let mut rng = Rng::new(seed);
    let mut data = vec![0.0; size * size * 3];
    let base: Vec<f64> = (0..3).map(|_| 0.25 + 0.4 * rng.next_f64()).collect();
    let rx = size / 4 + rng.next_below(size / 8);
    let ry = size / 4 + rng.next_below(size / 8);
    let (rw, rh) = (size / 3, size / 3);
    let roff: Vec<f64> = (0..3).map(|_| 0.3 + 0.2 * rng.next_f64()).collect();
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                let mut v = base[c];
                if x >= rx && x < rx + rw && y >= ry && y < ry + rh {
                    v += roff[c];
                }
                v += noise * rng.next_normal();
                data[c * size * size + y * size + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    Image::new(size, size, 3, data).unwrap()
}

/// Oracle term values (kept separate from the production breakdown type
/// on purpose).
#[derive(Debug, Clone, Copy)]
pub struct OracleEnergy {
    pub data: f64,
    pub flatten: f64,
    pub edge: f64,
    pub total: f64,
}

/// Edge response at one pixel: sum over in-bounds 4-neighbors of the
/// absolute channel-summed difference.
pub fn oracle_response(img: &Image, y: usize, x: usize) -> f64 {
    let (h, w) = (img.height(), img.width());
    let mut acc = 0.0;
    for (dy, dx) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
        let (ny, nx) = (y as isize + dy, x as isize + dx);
        if ny < 0 || nx < 0 || ny as usize >= h || nx as usize >= w {
            continue;
        }
        let mut d = 0.0;
        for c in 0..img.channels() {
            d += img.at(y, x, c) - img.at(ny as usize, nx as usize, c);
        }
        acc += d.abs();
    }
    acc
}

/// BT.601 YUV with U/V recentred into [0,1] (clamped against rounding),
/// matching the documented color-space convention.
fn oracle_yuv(img: &Image) -> Vec<Vec<f64>> {
    let n = img.pixel_count();
    if img.channels() != 3 {
        return (0..img.channels())
            .map(|c| img.channel(c).to_vec())
            .collect();
    }
    let mut planes = vec![vec![0.0; n]; 3];
    for i in 0..n {
        let (r, g, b) = (img.channel(0)[i], img.channel(1)[i], img.channel(2)[i]);
        let y = 0.299 * r + 0.587 * g + 0.114 * b;
        let u = 0.5 + 0.5 / (1.0 - 0.114) * (b - y);
        let v = 0.5 + 0.5 / (1.0 - 0.299) * (r - y);
        planes[0][i] = y.clamp(0.0, 1.0);
        planes[1][i] = u.clamp(0.0, 1.0);
        planes[2][i] = v.clamp(0.0, 1.0);
    }
    planes
}

/// Brute-force energy: every sum written exactly as defined, with the
/// per-pixel branch chosen from the raw edge responses of I and T.
pub fn oracle_energy(t: &Image, i: &Image, b: &BinaryMask, prm: &EnergyParams) -> OracleEnergy {
    assert!(t.same_shape(i));
    let (h, w, nch) = (t.height(), t.width(), t.channels());
    let n = (h * w) as f64;

    // Per-pixel branch: p_large iff E(I) < c1 and E(T) - E(I) > c2.
    let mut large = vec![false; h * w];
    let mut resp_i = vec![0.0; h * w];
    let mut resp_t = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let ei = oracle_response(i, y, x);
            let et = oracle_response(t, y, x);
            resp_i[y * w + x] = ei;
            resp_t[y * w + x] = et;
            large[y * w + x] = ei < prm.c1 && et - ei > prm.c2;
        }
    }

    // Data term.
    let mut data = 0.0;
    for c in 0..nch {
        for k in 0..h * w {
            let d = t.channel(c)[k] - i.channel(c)[k];
            data += d * d;
        }
    }
    data /= n;

    // Flattening term over ordered pairs in the (clipped) h x h window.
    let yuv = oracle_yuv(i);
    let r = (prm.h as isize - 1) / 2;
    let mut flatten = 0.0;
    for y in 0..h {
        for x in 0..w {
            let k = y * w + x;
            let (p, lg) = if large[k] {
                (prm.p_large, true)
            } else {
                (prm.p_small, false)
            };
            for dy in -r..=r {
                for dx in -r..=r {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let (ny, nx) = (y as isize + dy, x as isize + dx);
                    if ny < 0 || nx < 0 || ny as usize >= h || nx as usize >= w {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    let wgt = if lg {
                        let d2 = (dx * dx + dy * dy) as f64;
                        prm.alpha * (-d2 / (2.0 * prm.sigma_s * prm.sigma_s)).exp()
                    } else {
                        let mut d2 = 0.0;
                        for plane in &yuv {
                            let d = plane[k] - plane[j];
                            d2 += d * d;
                        }
                        (-d2 / (2.0 * prm.sigma_r * prm.sigma_r)).exp()
                    };
                    for c in 0..nch {
                        let d = t.channel(c)[k] - t.channel(c)[j];
                        let s = if p == 2.0 {
                            d * d
                        } else {
                            (d * d + prm.eps * prm.eps).powf(p * 0.5) - prm.eps.powf(p)
                        };
                        flatten += wgt * s;
                    }
                }
            }
        }
    }
    flatten /= n;

    // Edge-preserving term on the masked pixels.
    let ne = b.set_count();
    let mut edge = 0.0;
    if ne > 0 {
        for k in 0..h * w {
            if b.bits()[k] {
                let d = resp_t[k] - resp_i[k];
                edge += d * d;
            }
        }
        edge /= ne as f64;
    }

    OracleEnergy {
        data,
        flatten,
        edge,
        total: data + prm.lambda_f * flatten + prm.lambda_e * edge,
    }
}

/// Pixels touched by a masked edge pair whose channel-summed difference
/// sits near the |.|-kink. There the evaluated energy uses the raw
/// absolute value while the gradient uses its eps-smoothed sign, so
/// finite differences legitimately disagree; gradient checks exclude
/// those components.
pub fn kink_pixels(t: &Image, b: &BinaryMask, margin: f64) -> Vec<bool> {
    let (h, w, nch) = (t.height(), t.width(), t.channels());
    let mut near = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !b.bits()[i] {
                continue;
            }
            for (dy, dx) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || ny as usize >= h || nx as usize >= w {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                let mut gsum = 0.0;
                for c in 0..nch {
                    gsum += t.channel(c)[i] - t.channel(c)[j];
                }
                if gsum.abs() < margin {
                    near[i] = true;
                    near[j] = true;
                }
            }
        }
    }
    near
}

/// Relative difference with an absolute floor for near-zero values.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}
