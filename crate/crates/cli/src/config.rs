//! JSON run configuration.
//!
//! Every field is optional; absent keys fall back to the preset (energy)
//! or the documented solver/training defaults. Unknown keys are
//! rejected so typos fail loudly. `energy.c1` accepts a number or the
//! string "inf".

use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use smoothlab_core::apps::EdgeDetectConfig;
use smoothlab_core::energy::EnergyParams;
use smoothlab_core::solvers::{GdConfig, IrlsConfig, PMode};
use smoothlab_core::{Error, Result};

fn opt_maybe_inf<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum NumOrStr {
        Num(f64),
        Str(String),
    }
    match Option::<NumOrStr>::deserialize(d)? {
        None => Ok(None),
        Some(NumOrStr::Num(v)) => Ok(Some(v)),
        Some(NumOrStr::Str(s)) => match s.as_str() {
            "inf" | "+inf" | "Infinity" => Ok(Some(f64::INFINITY)),
            other => Err(serde::de::Error::custom(format!(
                "c1 must be a number or \"inf\", got {other:?}"
            ))),
        },
    }
}

/// Per-field overrides of [`EnergyParams`].
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyOverrides {
    pub lambda_f: Option<f64>,
    pub lambda_e: Option<f64>,
    pub sigma_r: Option<f64>,
    pub sigma_s: Option<f64>,
    pub alpha: Option<f64>,
    #[serde(deserialize_with = "opt_maybe_inf")]
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub h: Option<usize>,
    pub p_large: Option<f64>,
    pub p_small: Option<f64>,
    pub eps: Option<f64>,
}

impl EnergyOverrides {
    pub fn apply(&self, base: EnergyParams) -> EnergyParams {
        EnergyParams {
            lambda_f: self.lambda_f.unwrap_or(base.lambda_f),
            lambda_e: self.lambda_e.unwrap_or(base.lambda_e),
            sigma_r: self.sigma_r.unwrap_or(base.sigma_r),
            sigma_s: self.sigma_s.unwrap_or(base.sigma_s),
            alpha: self.alpha.unwrap_or(base.alpha),
            c1: self.c1.unwrap_or(base.c1),
            c2: self.c2.unwrap_or(base.c2),
            h: self.h.unwrap_or(base.h),
            p_large: self.p_large.unwrap_or(base.p_large),
            p_small: self.p_small.unwrap_or(base.p_small),
            eps: self.eps.unwrap_or(base.eps),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GdOverrides {
    pub learning_rate: Option<f64>,
    pub iterations: Option<usize>,
    pub pmap_refresh: Option<usize>,
}

impl GdOverrides {
    pub fn apply(&self, mut base: GdConfig) -> GdConfig {
        if let Some(v) = self.learning_rate {
            base.learning_rate = v;
        }
        if let Some(v) = self.iterations {
            base.iterations = v;
        }
        if let Some(v) = self.pmap_refresh {
            base.pmap_refresh = v;
        }
        base
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IrlsOverrides {
    pub outer_iterations: Option<usize>,
    pub cg_tol: Option<f64>,
    pub cg_max_iters: Option<usize>,
    pub p_mode: Option<String>,
}

impl IrlsOverrides {
    pub fn apply(&self, mut base: IrlsConfig) -> Result<IrlsConfig> {
        if let Some(v) = self.outer_iterations {
            base.outer_iterations = v;
        }
        if let Some(v) = self.cg_tol {
            base.cg_tol = v;
        }
        if let Some(v) = self.cg_max_iters {
            base.cg_max_iters = v;
        }
        if let Some(mode) = &self.p_mode {
            base.p_mode = parse_pmode(mode)?;
            if matches!(base.p_mode, PMode::Dynamic) {
                return Err(Error::InvalidParams(
                    "irls.p_mode: dynamic selection is gd-only".into(),
                ));
            }
        }
        Ok(base)
    }
}

pub fn parse_pmode(s: &str) -> Result<PMode> {
    match s {
        "dynamic" => Ok(PMode::Dynamic),
        "all_large" => Ok(PMode::AllLarge),
        "all_small" => Ok(PMode::AllSmall),
        "half_half" => Ok(PMode::HalfHalf),
        other => Err(Error::InvalidArgument(format!(
            "unknown p-mode '{other}' (expected dynamic|all_large|all_small|half_half)"
        ))),
    }
}

pub fn pmode_name(mode: &PMode) -> &'static str {
    match mode {
        PMode::Dynamic => "dynamic",
        PMode::AllLarge => "all_large",
        PMode::AllSmall => "all_small",
        PMode::HalfHalf => "half_half",
        PMode::Frozen(_) => "frozen",
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    pub epochs: Option<usize>,
    pub crop: Option<usize>,
    pub learning_rate: Option<f64>,
    pub seed: Option<u64>,
    pub checkpoint_every: Option<usize>,
    pub steps_per_epoch: Option<usize>,
}

/// The config file: optional override blocks per subsystem.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub preset: Option<String>,
    pub energy: EnergyOverrides,
    pub gd: GdOverrides,
    pub irls: IrlsOverrides,
    pub train: TrainOverrides,
    pub edge_detect: Option<EdgeDetectConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let bytes = std::fs::read(path).map_err(|source| Error::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_slice(&bytes).map_err(|e| {
            Error::InvalidParams(format!("config {}: {e}", path.display()))
        })
    }
}

/// Echo block printed at the start of every run so results are
/// reproducible from the log alone.
#[derive(Debug, Serialize)]
pub struct ResolvedRun<'a> {
    pub command: &'a str,
    pub preset: &'a str,
    pub energy: &'a EnergyParams,
    pub edge_detect: &'a EdgeDetectConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_mode: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    pub seed: u64,
    pub threads: usize,
}

pub fn print_resolved(run: &ResolvedRun) {
    println!(
        "resolved-config: {}",
        serde_json::to_string(run).expect("config serializes")
    );
}
