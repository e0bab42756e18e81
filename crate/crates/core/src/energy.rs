//! The smoothing objective and its analytic gradient.
//!
//! Total energy = data + lambda_f * flatten + lambda_e * edge.
//!
//! * data: mean squared difference between output T and input I.
//! * flatten: window-pair penalty sum_i sum_{j in h x h window} w_ij *
//!   |T_i - T_j|^{p_i}, applied per channel, normalized by pixel count.
//!   |d|^p is smoothed as (d^2 + eps^2)^{p/2} - eps^p so the term is zero
//!   at d = 0 and differentiable everywhere.
//! * edge: masked quadratic difference between the raw edge responses of
//!   T and the guidance map of I, normalized by the mask popcount.
//!
//! The per-pixel exponent p_i switches between p_large (with amplified
//! spatial affinity weights) and p_small (with color affinity weights in
//! YUV) based on the guidance responses; the p-map is held constant
//! during a gradient evaluation and recomputed between solver steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::{self, BinaryMask, GuidanceMap, Neighborhood};
use crate::image::Image;

/// All scalars of the objective. Defaults are the reference settings:
/// sigma_r 0.1, sigma_s 7, lambda_f 1, lambda_e 0.1, alpha 5, c1 20,
/// c2 10, h 21, p_large 2, p_small 0.8, eps 1e-4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyParams {
    pub lambda_f: f64,
    pub lambda_e: f64,
    pub sigma_r: f64,
    pub sigma_s: f64,
    pub alpha: f64,
    /// Response threshold for the p_large branch; may be +infinity
    /// (serialized as the string "inf").
    #[serde(with = "maybe_inf")]
    pub c1: f64,
    pub c2: f64,
    /// Flattening window side in pixels; odd, >= 3.
    pub h: usize,
    pub p_large: f64,
    pub p_small: f64,
    pub eps: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            lambda_f: 1.0,
            lambda_e: 0.1,
            sigma_r: 0.1,
            sigma_s: 7.0,
            alpha: 5.0,
            c1: 20.0,
            c2: 10.0,
            h: 21,
            p_large: 2.0,
            p_small: 0.8,
            eps: 1e-4,
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("lambda_f", self.lambda_f),
            ("lambda_e", self.lambda_e),
            ("sigma_r", self.sigma_r),
            ("sigma_s", self.sigma_s),
            ("alpha", self.alpha),
            ("eps", self.eps),
        ];
        for (name, v) in pos {
            if !(v > 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.h % 2 == 0 || self.h < 3 {
            return Err(Error::InvalidParams(format!(
                "h must be odd and >= 3, got {}",
                self.h
            )));
        }
        if !(self.p_small > 0.0 && self.p_small <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "p_small must be in (0,1], got {}",
                self.p_small
            )));
        }
        if !(self.p_large > 1.0 && self.p_large <= 2.0) {
            return Err(Error::InvalidParams(format!(
                "p_large must be in (1,2], got {}",
                self.p_large
            )));
        }
        if self.c1.is_nan() || self.c1 < 0.0 {
            return Err(Error::InvalidParams("c1 must be >= 0 (or +inf)".into()));
        }
        if !(self.c2 >= 0.0) {
            return Err(Error::InvalidParams("c2 must be >= 0".into()));
        }
        Ok(())
    }
}

mod maybe_inf {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    struct MaybeInf;
    impl Visitor<'_> for MaybeInf {
        type Value = f64;
        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            write!(f, "a number or the string \"inf\"")
        }
        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }
        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }
        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }
        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" | "+inf" | "Infinity" => Ok(f64::INFINITY),
                other => Err(E::custom(format!("expected a number or \"inf\", got {other:?}"))),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(MaybeInf)
    }
}

/// Per-pixel regularizer branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Large,
    Small,
}

/// Per-pixel branch map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PMap {
    height: usize,
    width: usize,
    tags: Vec<Branch>,
}

impl PMap {
    pub fn uniform(height: usize, width: usize, branch: Branch) -> Self {
        PMap {
            height,
            width,
            tags: vec![branch; height * width],
        }
    }

    /// Left half p_large, right half p_small (the fixed split used for
    /// solver comparisons).
    pub fn half_half(height: usize, width: usize) -> Self {
        let mut tags = vec![Branch::Small; height * width];
        for y in 0..height {
            for x in 0..width / 2 {
                tags[y * width + x] = Branch::Large;
            }
        }
        PMap {
            height,
            width,
            tags,
        }
    }

    pub fn from_tags(height: usize, width: usize, tags: Vec<Branch>) -> Result<Self> {
        if tags.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "pmap length {} != {height}x{width}",
                tags.len()
            )));
        }
        Ok(PMap {
            height,
            width,
            tags,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn tags(&self) -> &[Branch] {
        &self.tags
    }

    #[inline]
    pub fn at(&self, idx: usize) -> Branch {
        self.tags[idx]
    }

    /// Fraction of pixels whose branch differs from `other`.
    pub fn flip_fraction(&self, other: &PMap) -> f64 {
        let flips = self
            .tags
            .iter()
            .zip(&other.tags)
            .filter(|(a, b)| a != b)
            .count();
        flips as f64 / self.tags.len() as f64
    }
}

/// Energy value split into its three terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown {
    pub data: f64,
    pub flatten: f64,
    pub edge: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn csv_header() -> &'static str {
        "iter,total,data,flatten,edge"
    }

    pub fn csv_row(&self, iter: usize) -> String {
        format!(
            "{iter},{:.12e},{:.12e},{:.12e},{:.12e}",
            self.total, self.data, self.flatten, self.edge
        )
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// Mean squared difference between T and I (summed over channels).
pub fn data_term(t: &Image, i: &Image) -> Result<f64> {
    if !t.same_shape(i) {
        return Err(Error::DimensionMismatch("data_term shapes differ".into()));
    }
    let n = t.pixel_count() as f64;
    let sum: f64 = t
        .data()
        .iter()
        .zip(i.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / n)
}

/// Color affinity in YUV: exp(-sum_c (I_i - I_j)^2 / (2 sigma_r^2)).
pub fn color_weight(i_yuv: &Image, i: (usize, usize), j: (usize, usize), sigma_r: f64) -> f64 {
    let mut d2 = 0.0;
    for c in 0..i_yuv.channels() {
        let d = i_yuv.at(i.0, i.1, c) - i_yuv.at(j.0, j.1, c);
        d2 += d * d;
    }
    (-d2 / (2.0 * sigma_r * sigma_r)).exp()
}

/// Spatial affinity: exp(-((x_i-x_j)^2 + (y_i-y_j)^2) / (2 sigma_s^2)).
pub fn spatial_weight(i: (usize, usize), j: (usize, usize), sigma_s: f64) -> f64 {
    let dy = i.0 as f64 - j.0 as f64;
    let dx = i.1 as f64 - j.1 as f64;
    (-(dx * dx + dy * dy) / (2.0 * sigma_s * sigma_s)).exp()
}

/// Dynamic branch selection: pixel i takes the p_large branch iff
/// E_i(I) < c1 and E_i(T) - E_i(I) > c2.
pub fn select_p(e_input: &GuidanceMap, e_output: &GuidanceMap, params: &EnergyParams) -> PMap {
    assert_eq!(e_input.height(), e_output.height());
    assert_eq!(e_input.width(), e_output.width());
    let tags = e_input
        .response()
        .iter()
        .zip(e_output.response())
        .map(|(&ei, &et)| {
            if ei < params.c1 && et - ei > params.c2 {
                Branch::Large
            } else {
                Branch::Small
            }
        })
        .collect();
    PMap {
        height: e_input.height(),
        width: e_input.width(),
        tags,
    }
}

/// Expands the p_large region of a p-map by square dilation (used by the
/// abstraction preset to soften over-sharpened borders).
pub fn dilate_large(pmap: &PMap, radius: usize) -> PMap {
    if radius == 0 {
        return pmap.clone();
    }
    let bits: Vec<bool> = pmap.tags.iter().map(|&b| b == Branch::Large).collect();
    let mask = BinaryMask::new(pmap.height, pmap.width, bits).expect("shape");
    let dilated = guidance::dilate_mask(&mask, radius);
    let tags = dilated
        .bits()
        .iter()
        .map(|&b| if b { Branch::Large } else { Branch::Small })
        .collect();
    PMap {
        height: pmap.height,
        width: pmap.width,
        tags,
    }
}

/// Smoothed |d|^p: (d^2 + eps^2)^{p/2} - eps^p. Zero at d = 0.
#[inline]
pub fn smooth_abs_pow(d: f64, p: f64, eps: f64) -> f64 {
    let u = d * d + eps * eps;
    if p == 2.0 {
        d * d
    } else {
        u.powf(p * 0.5) - eps.powf(p)
    }
}

/// Derivative of `smooth_abs_pow` in d: p * d * (d^2 + eps^2)^{p/2 - 1}.
#[inline]
pub fn smooth_abs_pow_deriv(d: f64, p: f64, eps: f64) -> f64 {
    if p == 2.0 {
        2.0 * d
    } else {
        let u = d * d + eps * eps;
        p * d * u.powf(p * 0.5 - 1.0)
    }
}

/// Options that application presets thread through the evaluation.
#[derive(Debug, Clone, Default)]
pub struct ContextOptions {
    /// Scales the flattening weights w_ij of pairs anchored at masked
    /// pixels (content-aware presets set scale 0 on the protected region).
    pub weight_mask: Option<(BinaryMask, f64)>,
    /// Dilation radius applied to the p_large region after selection.
    pub large_dilate: usize,
    /// Neighborhood of the edge response (channel-sum form).
    pub neighborhood: Neighborhood,
}

impl ContextOptions {
    pub fn new() -> Self {
        ContextOptions {
            weight_mask: None,
            large_dilate: 0,
            neighborhood: Neighborhood::Four,
        }
    }
}

// Color-weight cache ceiling: pixel count x window area.
const COLOR_CACHE_LIMIT: usize = 16 << 20;

/// Precomputed per-input state: YUV conversion, spatial kernel table and
/// (when the image is small enough) cached color affinities. Reused
/// across solver iterations; T varies, I does not.
pub struct EnergyContext<'a> {
    input: &'a Image,
    guide: &'a GuidanceMap,
    edges: &'a BinaryMask,
    params: EnergyParams,
    options: ContextOptions,
    yuv: Image,
    radius: usize,
    win: usize,
    spatial: Vec<f64>,
    color_cache: Option<Vec<f64>>,
}

impl<'a> EnergyContext<'a> {
    pub fn new(
        input: &'a Image,
        guide: &'a GuidanceMap,
        edges: &'a BinaryMask,
        params: EnergyParams,
        options: ContextOptions,
    ) -> Result<Self> {
        params.validate()?;
        if guide.height() != input.height() || guide.width() != input.width() {
            return Err(Error::DimensionMismatch("guidance vs input".into()));
        }
        if edges.height() != input.height() || edges.width() != input.width() {
            return Err(Error::DimensionMismatch("edge mask vs input".into()));
        }
        if let Some((mask, _)) = &options.weight_mask {
            if mask.height() != input.height() || mask.width() != input.width() {
                return Err(Error::DimensionMismatch("weight mask vs input".into()));
            }
        }
        let yuv = if input.channels() == 3 {
            input.rgb_to_yuv()?
        } else {
            input.clone()
        };
        let radius = (params.h - 1) / 2;
        let win = params.h;
        let mut spatial = vec![0.0; win * win];
        for dy in 0..win {
            for dx in 0..win {
                let fy = dy as f64 - radius as f64;
                let fx = dx as f64 - radius as f64;
                spatial[dy * win + dx] =
                    (-(fx * fx + fy * fy) / (2.0 * params.sigma_s * params.sigma_s)).exp();
            }
        }
        let mut ctx = EnergyContext {
            input,
            guide,
            edges,
            params,
            options,
            yuv,
            radius,
            win,
            spatial,
            color_cache: None,
        };
        if input.pixel_count() * win * win <= COLOR_CACHE_LIMIT {
            ctx.color_cache = Some(ctx.build_color_cache());
        }
        Ok(ctx)
    }

    pub fn params(&self) -> &EnergyParams {
        &self.params
    }
    pub fn input(&self) -> &Image {
        self.input
    }
    pub fn guide(&self) -> &GuidanceMap {
        self.guide
    }
    pub fn options(&self) -> &ContextOptions {
        &self.options
    }
    pub fn window_radius(&self) -> usize {
        self.radius
    }

    fn build_color_cache(&self) -> Vec<f64> {
        let (h, w) = (self.input.height(), self.input.width());
        let win = self.win;
        let r = self.radius as isize;
        let inv = 1.0 / (2.0 * self.params.sigma_r * self.params.sigma_r);
        let nch = self.yuv.channels();
        let npix = h * w;
        let mut cache = vec![0.0; npix * win * win];
        let planes: Vec<&[f64]> = (0..nch).map(|c| self.yuv.channel(c)).collect();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let base = i * win * win;
                for dy in -r..=r {
                    let ny = y as isize + dy;
                    if ny < 0 || ny as usize >= h {
                        continue;
                    }
                    for dx in -r..=r {
                        if dy == 0 && dx == 0 {
                            continue;
                        }
                        let nx = x as isize + dx;
                        if nx < 0 || nx as usize >= w {
                            continue;
                        }
                        let j = ny as usize * w + nx as usize;
                        let mut d2 = 0.0;
                        for plane in &planes {
                            let d = plane[i] - plane[j];
                            d2 += d * d;
                        }
                        let k = ((dy + r) as usize) * win + (dx + r) as usize;
                        cache[base + k] = (-d2 * inv).exp();
                    }
                }
            }
        }
        cache
    }

    /// Flattening weight of the ordered pair (i, j) under pixel i's branch.
    #[inline]
    fn pair_weight(&self, i: usize, j: usize, dy: isize, dx: isize, branch: Branch) -> f64 {
        let r = self.radius as isize;
        let k = ((dy + r) as usize) * self.win + (dx + r) as usize;
        let mut w = match branch {
            Branch::Large => self.params.alpha * self.spatial[k],
            Branch::Small => match &self.color_cache {
                Some(cache) => cache[i * self.win * self.win + k],
                None => {
                    let mut d2 = 0.0;
                    for c in 0..self.yuv.channels() {
                        let plane = self.yuv.channel(c);
                        let d = plane[i] - plane[j];
                        d2 += d * d;
                    }
                    (-d2 / (2.0 * self.params.sigma_r * self.params.sigma_r)).exp()
                }
            },
        };
        if let Some((mask, scale)) = &self.options.weight_mask {
            if mask.bits()[i] {
                w *= scale;
            }
        }
        w
    }

    /// Visits every ordered flattening pair (i, j) with its window offset,
    /// exponent and weight. Used by the IRLS solver to assemble surrogate
    /// systems.
    pub fn visit_pairs(
        &self,
        pmap: &PMap,
        mut f: impl FnMut(usize, usize, isize, isize, f64, f64),
    ) {
        let (h, w) = (self.input.height(), self.input.width());
        let r = self.radius as isize;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let branch = pmap.at(i);
                let p = match branch {
                    Branch::Large => self.params.p_large,
                    Branch::Small => self.params.p_small,
                };
                for dy in -r..=r {
                    let ny = y as isize + dy;
                    if ny < 0 || ny as usize >= h {
                        continue;
                    }
                    for dx in -r..=r {
                        if dy == 0 && dx == 0 {
                            continue;
                        }
                        let nx = x as isize + dx;
                        if nx < 0 || nx as usize >= w {
                            continue;
                        }
                        let j = ny as usize * w + nx as usize;
                        f(i, j, dy, dx, p, self.pair_weight(i, j, dy, dx, branch));
                    }
                }
            }
        }
    }

    /// Dynamic p-map for the current output T.
    pub fn select_p(&self, t: &Image) -> PMap {
        let e_t = guidance::edge_response(t, self.options.neighborhood);
        let pmap = select_p(self.guide, &e_t, &self.params);
        dilate_large(&pmap, self.options.large_dilate)
    }

    /// Energy breakdown at T under a fixed p-map.
    pub fn eval(&self, t: &Image, pmap: &PMap) -> Result<EnergyBreakdown> {
        self.eval_inner(t, pmap, None)
    }

    /// Energy breakdown plus analytic gradient dE/dT (unclamped image).
    pub fn eval_with_grad(&self, t: &Image, pmap: &PMap) -> Result<(EnergyBreakdown, Image)> {
        let mut grad = vec![0.0; t.data().len()];
        let breakdown = self.eval_inner(t, pmap, Some(&mut grad))?;
        let g = Image::new_unclamped(t.height(), t.width(), t.channels(), grad)?;
        Ok((breakdown, g))
    }

    fn eval_inner(
        &self,
        t: &Image,
        pmap: &PMap,
        mut grad: Option<&mut Vec<f64>>,
    ) -> Result<EnergyBreakdown> {
        if !t.same_shape(self.input) {
            return Err(Error::DimensionMismatch("T vs I".into()));
        }
        let (h, w, nch) = (t.height(), t.width(), t.channels());
        let npix = h * w;
        let n = npix as f64;
        let p = &self.params;
        let eps = p.eps;
        let eps_pow = [p.p_large, p.p_small].map(|pv| eps.powf(pv));

        // Flattening term and its raw pair gradient.
        let mut flatten = 0.0;
        let r = self.radius as isize;
        let t_planes_len = npix;
        {
            let tdata = t.data();
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let branch = pmap.at(i);
                    let (pv, epsp) = match branch {
                        Branch::Large => (p.p_large, eps_pow[0]),
                        Branch::Small => (p.p_small, eps_pow[1]),
                    };
                    let quadratic = pv == 2.0;
                    let half = pv * 0.5;
                    for dy in -r..=r {
                        let ny = y as isize + dy;
                        if ny < 0 || ny as usize >= h {
                            continue;
                        }
                        for dx in -r..=r {
                            if dy == 0 && dx == 0 {
                                continue;
                            }
                            let nx = x as isize + dx;
                            if nx < 0 || nx as usize >= w {
                                continue;
                            }
                            let j = ny as usize * w + nx as usize;
                            let wgt = self.pair_weight(i, j, dy, dx, branch);
                            if wgt == 0.0 {
                                continue;
                            }
                            for c in 0..nch {
                                let off = c * t_planes_len;
                                let d = tdata[off + i] - tdata[off + j];
                                if quadratic {
                                    flatten += wgt * d * d;
                                    if let Some(g) = grad.as_deref_mut() {
                                        let gd = wgt * 2.0 * d;
                                        g[off + i] += gd;
                                        g[off + j] -= gd;
                                    }
                                } else {
                                    let u = d * d + eps * eps;
                                    let t_pow = u.powf(half - 1.0);
                                    flatten += wgt * (t_pow * u - epsp);
                                    if let Some(g) = grad.as_deref_mut() {
                                        let gd = wgt * pv * d * t_pow;
                                        g[off + i] += gd;
                                        g[off + j] -= gd;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        flatten /= n;
        if let Some(g) = grad.as_deref_mut() {
            let scale = p.lambda_f / n;
            for v in g.iter_mut() {
                *v *= scale;
            }
        }

        // Data term.
        let mut data = 0.0;
        {
            let (td, id) = (t.data(), self.input.data());
            for k in 0..td.len() {
                let d = td[k] - id[k];
                data += d * d;
            }
            data /= n;
            if let Some(g) = grad.as_deref_mut() {
                let scale = 2.0 / n;
                for k in 0..td.len() {
                    g[k] += scale * (td[k] - id[k]);
                }
            }
        }

        // Edge-preserving term: raw responses in the value, eps-smoothed
        // sign in the gradient.
        let mut edge = 0.0;
        let ne = self.edges.set_count();
        if ne > 0 {
            let e_t = guidance::edge_response(t, self.options.neighborhood);
            let gresp = self.guide.response();
            let bits = self.edges.bits();
            for i in 0..npix {
                if bits[i] {
                    let d = e_t.response()[i] - gresp[i];
                    edge += d * d;
                }
            }
            edge /= ne as f64;
            if let Some(g) = grad.as_deref_mut() {
                let tdata = t.data();
                let coeff_scale = 2.0 * p.lambda_e / ne as f64;
                let offsets = self.options.neighborhood.offsets();
                for y in 0..h {
                    for x in 0..w {
                        let i = y * w + x;
                        if !bits[i] {
                            continue;
                        }
                        let coeff = coeff_scale * (e_t.response()[i] - gresp[i]);
                        for &(dy, dx) in offsets {
                            let (ny, nx) = (y as isize + dy, x as isize + dx);
                            if ny < 0 || nx < 0 || ny as usize >= h || nx as usize >= w {
                                continue;
                            }
                            let j = ny as usize * w + nx as usize;
                            let mut gsum = 0.0;
                            for c in 0..nch {
                                let off = c * npix;
                                gsum += tdata[off + i] - tdata[off + j];
                            }
                            let sig = gsum / (gsum * gsum + eps * eps).sqrt();
                            let gd = coeff * sig;
                            for c in 0..nch {
                                let off = c * npix;
                                g[off + i] += gd;
                                g[off + j] -= gd;
                            }
                        }
                    }
                }
            }
        }

        let total = data + p.lambda_f * flatten + p.lambda_e * edge;
        Ok(EnergyBreakdown {
            data,
            flatten,
            edge,
            total,
        })
    }
}

/// Flattening term under an explicit p-map (standalone form of the
/// context evaluation; weights derive from I).
pub fn flatten_term(t: &Image, i: &Image, pmap: &PMap, params: &EnergyParams) -> Result<f64> {
    let guide = guidance::edge_response(i, Neighborhood::Four);
    let edges = BinaryMask::empty(i.height(), i.width());
    let ctx = EnergyContext::new(i, &guide, &edges, *params, ContextOptions::new())?;
    Ok(ctx.eval(t, pmap)?.flatten)
}

/// Masked quadratic edge-response difference (raw responses).
pub fn edge_term(t: &Image, i: &Image, b: &BinaryMask) -> Result<f64> {
    if !t.same_shape(i) {
        return Err(Error::DimensionMismatch("edge_term shapes differ".into()));
    }
    let ne = b.set_count();
    if ne == 0 {
        return Ok(0.0);
    }
    let e_t = guidance::edge_response(t, Neighborhood::Four);
    let e_i = guidance::edge_response(i, Neighborhood::Four);
    let mut acc = 0.0;
    for (k, &set) in b.bits().iter().enumerate() {
        if set {
            let d = e_t.response()[k] - e_i.response()[k];
            acc += d * d;
        }
    }
    Ok(acc / ne as f64)
}

/// Full breakdown: the p-map is derived from (guide_i, E(T)) on the fly.
pub fn total_energy(
    t: &Image,
    i: &Image,
    b: &BinaryMask,
    guide_i: &GuidanceMap,
    params: &EnergyParams,
) -> Result<EnergyBreakdown> {
    let ctx = EnergyContext::new(i, guide_i, b, *params, ContextOptions::new())?;
    let pmap = ctx.select_p(t);
    ctx.eval(t, &pmap)
}

/// Analytic gradient of the total energy at T (p-map recomputed, then
/// frozen for the differentiation).
pub fn energy_gradient(
    t: &Image,
    i: &Image,
    b: &BinaryMask,
    guide_i: &GuidanceMap,
    params: &EnergyParams,
) -> Result<Image> {
    let ctx = EnergyContext::new(i, guide_i, b, *params, ContextOptions::new())?;
    let pmap = ctx.select_p(t);
    let (_, grad) = ctx.eval_with_grad(t, &pmap)?;
    Ok(grad)
}
