//! Edge-preserving image smoothing by direct minimization of an
//! unsupervised energy, plus a residual network trained against the same
//! energy so that smoothing becomes a single forward pass.
//!
//! Module map:
//!
//! * [`image`], [`io`]: planar float rasters and PNG/PNM codecs.
//! * [`guidance`]: edge responses, important-edge and texture masks.
//! * [`energy`]: the objective (data + flatten + edge) and its gradient.
//! * [`solvers`]: Adam gradient descent and IRLS/CG minimizers.
//! * [`net`]: hand-rolled autodiff CNN (residual, dilated).
//! * [`trainer`]: unsupervised corpus training and evaluation.
//! * [`apps`]: application presets and detail magnification.

pub mod apps;
pub mod energy;
pub mod error;
pub mod guidance;
pub mod image;
pub mod io;
pub mod net;
pub mod rng;
pub mod solvers;
pub mod trainer;

pub use apps::{detail_magnify, resolve_preset, Preset, ResolvedPreset};
pub use energy::{EnergyBreakdown, EnergyContext, EnergyParams, PMap};
pub use error::{Error, Result};
pub use guidance::{BinaryMask, GuidanceMap, Neighborhood};
pub use image::Image;
pub use net::{build as build_network, load_model, save_model, Network, PresetKind};
pub use rng::Rng;
pub use solvers::{solve_gd, solve_irls, GdConfig, IrlsConfig, PMode, SolveTrace};
pub use trainer::{evaluate, precompute_targets, train, TrainConfig};
