//! Unsupervised corpus training.
//!
//! The network never sees a target image: each step crops an input,
//! runs the residual network, evaluates the smoothing energy on the
//! output and backpropagates dE/dT through the network (the energy is
//! the loss layer). Guidance maps and masks are computed once per full
//! corpus image (cached by content hash in a sidecar directory) and
//! cropped together with the pixel window.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::apps::{prepare_guidance, resolve_preset, Preset, ResolvedPreset};
use crate::energy::{ContextOptions, EnergyBreakdown, EnergyContext, EnergyParams};
use crate::error::{Error, Result};
use crate::guidance::{BinaryMask, GuidanceMap};
use crate::image::Image;
use crate::io;
use crate::net::{save_model, Network, PresetKind, Tensor};
use crate::rng::Rng;

/// Training settings. Full-scale defaults (30 epochs, 224-px crops);
/// the TOY configuration typically uses 64-px crops.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub corpus_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub epochs: usize,
    pub crop: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub preset: Preset,
    pub checkpoint_every: usize,
    /// Train on one image only (the extended overfitting protocol).
    pub overfit_single: Option<PathBuf>,
    /// Steps per epoch; defaults to one crop per corpus image.
    pub steps_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            corpus_dir: PathBuf::from("."),
            checkpoint_dir: PathBuf::from("checkpoints"),
            epochs: 30,
            crop: 224,
            learning_rate: 0.01,
            seed: 0,
            preset: Preset::Flatten,
            checkpoint_every: 1,
            overfit_single: None,
            steps_per_epoch: None,
        }
    }
}

/// JSON sidecar stored next to each checkpoint model file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub step: u64,
    pub moments_digest: String,
    pub seed: u64,
}

/// Per-image cached guidance inputs (full-image resolution).
#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    height: usize,
    width: usize,
    guide: Vec<f64>,
    edges: Vec<bool>,
    weight_mask: Option<(Vec<bool>, f64)>,
    large_dilate: usize,
}

/// One corpus image with its cache location.
#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub path: PathBuf,
    pub hash: String,
    pub cache_path: PathBuf,
}

/// Precomputed corpus: entries in deterministic (sorted) order plus
/// cache statistics from the last precompute run.
#[derive(Debug)]
pub struct CorpusIndex {
    pub entries: Vec<CorpusEntry>,
    pub cache_hits: usize,
    pub cache_misses: usize,
}

fn is_image_file(path: &Path) -> bool {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    if name.contains("_saliency.") {
        return false;
    }
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("png") | Some("ppm") | Some("pgm")
    )
}

fn saliency_path(image: &Path) -> PathBuf {
    let stem = image
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default();
    image.with_file_name(format!("{stem}_saliency.png"))
}

fn content_hash(path: &Path, preset: Preset) -> Result<String> {
    let bytes = fs::read(path).map_err(|source| Error::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    hasher.update(preset.name().as_bytes());
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Lists corpus images in sorted order (saliency masks excluded).
pub fn list_corpus(corpus_dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(corpus_dir).map_err(|source| Error::Unreadable {
        path: corpus_dir.to_path_buf(),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Corpus(format!(
            "no images found in {}",
            corpus_dir.display()
        )));
    }
    Ok(files)
}

/// Computes (or reuses) the guidance cache for every corpus image.
/// Idempotent: a second run with unchanged inputs is all cache hits.
pub fn precompute_targets(corpus_dir: &Path, preset: Preset) -> Result<CorpusIndex> {
    let files = list_corpus(corpus_dir)?;
    let resolved = resolve_preset(preset);
    let cache_dir = corpus_dir
        .join(".smoothlab_cache")
        .join(resolved.id.name());
    fs::create_dir_all(&cache_dir).map_err(|source| Error::Unwritable {
        path: cache_dir.clone(),
        source,
    })?;

    // Content-aware presets need every saliency mask up front.
    if preset.needs_saliency() {
        let missing: Vec<String> = files
            .iter()
            .filter(|f| !saliency_path(f).is_file())
            .map(|f| saliency_path(f).display().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Corpus(format!(
                "missing saliency masks: {}",
                missing.join(", ")
            )));
        }
    }

    let mut index = CorpusIndex {
        entries: Vec::with_capacity(files.len()),
        cache_hits: 0,
        cache_misses: 0,
    };
    for path in files {
        let hash = content_hash(&path, preset)?;
        let cache_path = cache_dir.join(format!("{hash}.json"));
        if cache_path.is_file() {
            index.cache_hits += 1;
        } else {
            let img = io::load_image(&path)?;
            let saliency = if preset.needs_saliency() {
                Some(BinaryMask::load(&saliency_path(&path))?)
            } else {
                None
            };
            let gi = prepare_guidance(&img, &resolved, saliency.as_ref())?;
            let record = CacheRecord {
                height: img.height(),
                width: img.width(),
                guide: gi.guide.response().to_vec(),
                edges: gi.edges.bits().to_vec(),
                weight_mask: gi
                    .options
                    .weight_mask
                    .map(|(m, s)| (m.bits().to_vec(), s)),
                large_dilate: gi.options.large_dilate,
            };
            let tmp = cache_path.with_extension("json.tmp");
            fs::write(&tmp, serde_json::to_vec(&record)?).map_err(|source| {
                Error::Unwritable {
                    path: tmp.clone(),
                    source,
                }
            })?;
            fs::rename(&tmp, &cache_path).map_err(|source| Error::Unwritable {
                path: cache_path.clone(),
                source,
            })?;
            index.cache_misses += 1;
        }
        index.entries.push(CorpusEntry {
            path,
            hash,
            cache_path,
        });
    }
    Ok(index)
}

fn load_cache(entry: &CorpusEntry) -> Result<CacheRecord> {
    let bytes = fs::read(&entry.cache_path).map_err(|source| Error::Unreadable {
        path: entry.cache_path.clone(),
        source,
    })?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Full-image guidance inputs reconstituted from the cache.
struct FullInputs {
    image: Image,
    guide: GuidanceMap,
    edges: BinaryMask,
    weight_mask: Option<(BinaryMask, f64)>,
    large_dilate: usize,
}

fn load_full_inputs(entry: &CorpusEntry) -> Result<FullInputs> {
    let image = io::load_image(&entry.path)?;
    let rec = load_cache(entry)?;
    if rec.height != image.height() || rec.width != image.width() {
        return Err(Error::Corpus(format!(
            "stale cache for {}",
            entry.path.display()
        )));
    }
    Ok(FullInputs {
        guide: GuidanceMap::new(rec.height, rec.width, rec.guide)?,
        edges: BinaryMask::new(rec.height, rec.width, rec.edges)?,
        weight_mask: match rec.weight_mask {
            Some((bits, scale)) => Some((BinaryMask::new(rec.height, rec.width, bits)?, scale)),
            None => None,
        },
        large_dilate: rec.large_dilate,
        image,
    })
}

struct CropInputs {
    image: Image,
    guide: GuidanceMap,
    edges: BinaryMask,
    options: ContextOptions,
}

fn crop_inputs(full: &FullInputs, x0: usize, y0: usize, size: usize) -> Result<CropInputs> {
    Ok(CropInputs {
        image: full.image.crop(x0, y0, size)?,
        guide: full.guide.crop(x0, y0, size, size)?,
        edges: full.edges.crop(x0, y0, size, size)?,
        options: ContextOptions {
            weight_mask: match &full.weight_mask {
                Some((m, s)) => Some((m.crop(x0, y0, size, size)?, *s)),
                None => None,
            },
            large_dilate: full.large_dilate,
            neighborhood: Default::default(),
        },
    })
}

/// One training step on a prepared crop; returns the energy breakdown.
fn train_step(
    net: &mut Network,
    crop: &CropInputs,
    params: EnergyParams,
    lr: f64,
) -> Result<EnergyBreakdown> {
    let ctx = EnergyContext::new(
        &crop.image,
        &crop.guide,
        &crop.edges,
        params,
        crop.options.clone(),
    )?;
    let t = net.forward_smooth(&crop.image, true)?;
    let pmap = ctx.select_p(&t);
    let (breakdown, grad) = ctx.eval_with_grad(&t, &pmap)?;
    if !breakdown.is_finite() {
        return Err(Error::NonFiniteEnergy {
            iteration: net.step_count() as usize,
            iterations_run: net.step_count() as usize,
        });
    }
    net.zero_grad();
    net.backward(&Tensor::from_image(&grad))?;
    net.adam_step(lr, 0.9, 0.999, 1e-8);
    Ok(breakdown)
}

fn write_checkpoint(
    net: &mut Network,
    dir: &Path,
    epoch: usize,
    seed: u64,
) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|source| Error::Unwritable {
        path: dir.to_path_buf(),
        source,
    })?;
    let model_path = dir.join(format!("checkpoint_ep{epoch:04}.usis"));
    let tmp = model_path.with_extension("usis.tmp");
    save_model(net, &tmp)?;
    fs::rename(&tmp, &model_path).map_err(|source| Error::Unwritable {
        path: model_path.clone(),
        source,
    })?;
    let meta = CheckpointMeta {
        epoch,
        step: net.step_count(),
        moments_digest: net.moments_digest(),
        seed,
    };
    let meta_path = model_path.with_extension("json");
    fs::write(&meta_path, serde_json::to_vec_pretty(&meta)?).map_err(|source| {
        Error::Unwritable {
            path: meta_path,
            source,
        }
    })?;
    Ok(model_path)
}

/// CSV rendering of the per-epoch mean breakdowns.
pub fn train_log_csv(epochs: &[EnergyBreakdown]) -> String {
    let mut out = String::from("epoch,mean_total,mean_data,mean_flatten,mean_edge\n");
    for (e, b) in epochs.iter().enumerate() {
        out.push_str(&format!(
            "{},{:.12e},{:.12e},{:.12e},{:.12e}\n",
            e + 1,
            b.total,
            b.data,
            b.flatten,
            b.edge
        ));
    }
    out
}

/// Trains the network; returns it with the per-epoch mean breakdowns.
pub fn train(mut net: Network, cfg: &TrainConfig) -> Result<(Network, Vec<EnergyBreakdown>)> {
    if net.preset == PresetKind::Paper26 && cfg.crop % 2 != 0 {
        return Err(Error::InvalidParams(
            "paper26 needs an even crop size".into(),
        ));
    }
    if cfg.learning_rate <= 0.0 {
        return Err(Error::InvalidParams("learning_rate must be > 0".into()));
    }
    if cfg.epochs == 0 {
        return Ok((net, Vec::new()));
    }
    let resolved: ResolvedPreset = resolve_preset(cfg.preset);
    let params = resolved.params;

    // Resolve the image set: whole corpus, or one image for overfitting.
    let index = match &cfg.overfit_single {
        Some(single) => {
            let dir = single
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .unwrap_or(Path::new("."));
            let full = precompute_targets(dir, cfg.preset)?;
            let wanted = single
                .canonicalize()
                .unwrap_or_else(|_| single.clone());
            let entries: Vec<CorpusEntry> = full
                .entries
                .into_iter()
                .filter(|e| {
                    e.path.canonicalize().map(|p| p == wanted).unwrap_or(false)
                        || e.path == *single
                })
                .collect();
            if entries.is_empty() {
                return Err(Error::Corpus(format!(
                    "overfit image {} not found in its directory listing",
                    single.display()
                )));
            }
            CorpusIndex {
                entries,
                cache_hits: 0,
                cache_misses: 0,
            }
        }
        None => precompute_targets(&cfg.corpus_dir, cfg.preset)?,
    };

    // Load everything once; corpora are desk-scale.
    let mut fulls = Vec::with_capacity(index.entries.len());
    for entry in &index.entries {
        fulls.push(load_full_inputs(entry)?);
    }

    let steps_per_epoch = cfg.steps_per_epoch.unwrap_or(fulls.len());
    let mut rng = Rng::new(cfg.seed);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..fulls.len()).collect();
        rng.shuffle(&mut order);
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        for step in 0..steps_per_epoch {
            let full = &fulls[order[step % order.len()]];
            let (x0, y0) = full.image.random_crop_pos(cfg.crop, &mut rng)?;
            let crop = crop_inputs(full, x0, y0, cfg.crop)?;
            let bd = train_step(&mut net, &crop, params, cfg.learning_rate)?;
            sums.0 += bd.total;
            sums.1 += bd.data;
            sums.2 += bd.flatten;
            sums.3 += bd.edge;
        }
        let n = steps_per_epoch as f64;
        log.push(EnergyBreakdown {
            total: sums.0 / n,
            data: sums.1 / n,
            flatten: sums.2 / n,
            edge: sums.3 / n,
        });

        if cfg.checkpoint_every > 0
            && (epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs)
        {
            write_checkpoint(&mut net, &cfg.checkpoint_dir, epoch, cfg.seed)?;
            let log_path = cfg.checkpoint_dir.join("train_log.csv");
            fs::write(&log_path, train_log_csv(&log)).map_err(|source| Error::Unwritable {
                path: log_path,
                source,
            })?;
        }
    }
    Ok((net, log))
}

/// Scores one image: a single forward pass, energy under the preset's
/// guidance pipeline.
pub fn evaluate_image(
    net: &mut Network,
    path: &Path,
    resolved: &ResolvedPreset,
) -> Result<EnergyBreakdown> {
    let img = io::load_image(path)?;
    let saliency = if resolved.id.needs_saliency() {
        Some(BinaryMask::load(&saliency_path(path))?)
    } else {
        None
    };
    let gi = prepare_guidance(&img, resolved, saliency.as_ref())?;
    let ctx = EnergyContext::new(&img, &gi.guide, &gi.edges, resolved.params, gi.options)?;
    let t = net.forward_smooth(&img, false)?;
    let pmap = ctx.select_p(&t);
    ctx.eval(&t, &pmap)
}

/// Scores a trained network on every image in a directory: one forward
/// pass per image, energy computed with the given parameters and the
/// default edge-detection pipeline.
pub fn evaluate(
    net: &mut Network,
    image_dir: &Path,
    preset: Preset,
) -> Result<Vec<(PathBuf, EnergyBreakdown)>> {
    let files = list_corpus(image_dir)?;
    let resolved = resolve_preset(preset);
    let mut rows = Vec::with_capacity(files.len());
    for path in files {
        let bd = evaluate_image(net, &path, &resolved)?;
        rows.push((path, bd));
    }
    Ok(rows)
}

/// CSV rendering of an evaluation table.
pub fn evaluation_csv(rows: &[(PathBuf, EnergyBreakdown)]) -> String {
    let mut out = String::from("image,total,data,flatten,edge\n");
    for (path, b) in rows {
        out.push_str(&format!(
            "{},{:.12e},{:.12e},{:.12e},{:.12e}\n",
            path.display(),
            b.total,
            b.data,
            b.flatten,
            b.edge
        ));
    }
    out
}
