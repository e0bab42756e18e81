//! Application presets and the detail-magnification compositor.
//!
//! A preset is a bundle of EnergyParams overrides plus guidance-map
//! pipeline steps. The resolved form serializes to JSON so every run can
//! print exactly what it used.

use serde::{Deserialize, Serialize};

use crate::energy::{ContextOptions, EnergyParams};
use crate::error::{Error, Result};
use crate::guidance::{self, BinaryMask, GuidanceMap, Neighborhood};
use crate::image::Image;

/// Stable preset identifiers (also the CLI strings, lowercased with
/// underscores).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Flatten,
    Abstract,
    Detail,
    Texture,
    ContentBg,
    ContentFg,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Flatten,
        Preset::Abstract,
        Preset::Detail,
        Preset::Texture,
        Preset::ContentBg,
        Preset::ContentFg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Flatten => "flatten",
            Preset::Abstract => "abstract",
            Preset::Detail => "detail",
            Preset::Texture => "texture",
            Preset::ContentBg => "content_bg",
            Preset::ContentFg => "content_fg",
        }
    }

    pub fn parse(s: &str) -> Result<Preset> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown preset '{s}'")))
    }

    /// Content-aware presets cannot run without a saliency mask.
    pub fn needs_saliency(self) -> bool {
        matches!(self, Preset::ContentBg | Preset::ContentFg)
    }
}

/// Region of a saliency mask (set bits = foreground).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaliencyRegion {
    Foreground,
    Background,
}

/// One guidance-map modification step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum GuidanceStep {
    /// Zero the guidance at texture points so fine repetitive patterns
    /// are smoothed away rather than preserved.
    ZeroTexture {
        window: usize,
        density: f64,
        max_len: usize,
    },
    /// Zero the guidance on one saliency region (so its edges are not
    /// preserved) and scale the flattening weights on the other region
    /// (so its content is left alone).
    MaskSaliency {
        smooth_region: SaliencyRegion,
        protect_weight_scale: f64,
    },
}

/// Important-edge detection knobs (hysteresis thresholds on the raw edge
/// response plus a minimum component length). Shared by all presets and
/// overridable via config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdgeDetectConfig {
    pub high: f64,
    pub low: f64,
    pub min_len: usize,
}

impl Default for EdgeDetectConfig {
    fn default() -> Self {
        EdgeDetectConfig {
            high: 0.2,
            low: 0.08,
            min_len: 10,
        }
    }
}

/// A preset fully resolved into parameters + pipeline, printable as JSON.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedPreset {
    pub id: Preset,
    pub params: EnergyParams,
    pub edge_detect: EdgeDetectConfig,
    pub pipeline: Vec<GuidanceStep>,
    /// Post-selection dilation radius of the p_large region.
    pub large_dilate: usize,
}

/// Expands a preset id into its exact parameter overrides.
pub fn resolve_preset(id: Preset) -> ResolvedPreset {
    let base = EnergyParams::default();
    let (params, pipeline, large_dilate) = match id {
        Preset::Flatten => (base, vec![], 0),
        Preset::Abstract => (base, vec![], 3),
        Preset::Detail => (
            EnergyParams {
                alpha: 15.0,
                c1: f64::INFINITY,
                c2: 0.0,
                ..base
            },
            vec![],
            0,
        ),
        Preset::Texture => (
            EnergyParams {
                alpha: 20.0,
                h: 5,
                ..base
            },
            vec![GuidanceStep::ZeroTexture {
                window: 7,
                density: 0.3,
                max_len: 30,
            }],
            0,
        ),
        Preset::ContentBg => (
            EnergyParams { h: 5, ..base },
            vec![GuidanceStep::MaskSaliency {
                smooth_region: SaliencyRegion::Background,
                protect_weight_scale: 0.0,
            }],
            0,
        ),
        Preset::ContentFg => (
            EnergyParams { h: 5, ..base },
            vec![GuidanceStep::MaskSaliency {
                smooth_region: SaliencyRegion::Foreground,
                protect_weight_scale: 0.0,
            }],
            0,
        ),
    };
    ResolvedPreset {
        id,
        params,
        edge_detect: EdgeDetectConfig::default(),
        pipeline,
        large_dilate,
    }
}

/// Guidance inputs assembled for one image under a preset: the (possibly
/// masked) guidance map, the important-edge mask B, and the context
/// options the energy needs.
pub struct GuidanceInputs {
    pub guide: GuidanceMap,
    pub edges: BinaryMask,
    pub options: ContextOptions,
}

/// Runs the preset's guidance pipeline on one input image.
pub fn prepare_guidance(
    input: &Image,
    resolved: &ResolvedPreset,
    saliency: Option<&BinaryMask>,
) -> Result<GuidanceInputs> {
    let mut guide = guidance::edge_response(input, Neighborhood::Four);
    let mut options = ContextOptions::new();
    options.large_dilate = resolved.large_dilate;

    for step in &resolved.pipeline {
        match step {
            GuidanceStep::ZeroTexture {
                window,
                density,
                max_len,
            } => {
                let texture = guidance::detect_texture(&guide, *window, *density, *max_len)?;
                guide = guidance::mask_guidance(&guide, &texture)?;
            }
            GuidanceStep::MaskSaliency {
                smooth_region,
                protect_weight_scale,
            } => {
                let fg = saliency.ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "preset '{}' requires a saliency mask",
                        resolved.id.name()
                    ))
                })?;
                if fg.height() != input.height() || fg.width() != input.width() {
                    return Err(Error::DimensionMismatch("saliency mask vs image".into()));
                }
                let (smoothed, protected) = match smooth_region {
                    SaliencyRegion::Foreground => (fg.clone(), fg.invert()),
                    SaliencyRegion::Background => (fg.invert(), fg.clone()),
                };
                guide = guidance::mask_guidance(&guide, &smoothed)?;
                options.weight_mask = Some((protected, *protect_weight_scale));
            }
        }
    }

    let ed = &resolved.edge_detect;
    let edges = guidance::detect_important_edges(&guide, ed.high, ed.low, ed.min_len)?;
    Ok(GuidanceInputs {
        guide,
        edges,
        options,
    })
}

/// Detail magnification: T + k * (I - T). k = 0 returns the smooth
/// layer, k = 1 the original; the result is unclamped (clamp on save).
pub fn detail_magnify(i: &Image, t: &Image, k: f64) -> Result<Image> {
    if !i.same_shape(t) {
        return Err(Error::DimensionMismatch(
            "detail_magnify shapes differ".into(),
        ));
    }
    if !(k >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "enhancement factor must be >= 0, got {k}"
        )));
    }
    let data: Vec<f64> = t
        .data()
        .iter()
        .zip(i.data())
        .map(|(tv, iv)| tv + k * (iv - tv))
        .collect();
    Image::new_unclamped(i.height(), i.width(), i.channels(), data)
}
