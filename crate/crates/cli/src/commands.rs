//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use smoothlab_core::apps::{prepare_guidance, resolve_preset, Preset, ResolvedPreset};
use smoothlab_core::energy::{
    Branch, ContextOptions, EnergyBreakdown, EnergyContext, PMap,
};
use smoothlab_core::guidance::{edge_response, Neighborhood};
use smoothlab_core::guidance::BinaryMask;
use smoothlab_core::net::{build, load_model, save_model, PresetKind, Tensor};
use smoothlab_core::solvers::{
    solve_gd, solve_irls, GdConfig, IrlsConfig, PMode, SolveTrace, TraceStep,
};
use smoothlab_core::trainer::{
    self, evaluation_csv, list_corpus, precompute_targets, train, train_log_csv, CheckpointMeta,
    TrainConfig,
};
use smoothlab_core::{io, Error, Image, Result};

use crate::config::{
    parse_pmode, pmode_name, print_resolved, FileConfig, ResolvedRun,
};

/// Writes a file via a temp sibling + rename so failures leave no
/// partial output. The temp name keeps the extension (the image codec
/// dispatches on it).
fn write_image_atomic(img: &Image, path: &Path) -> Result<()> {
    let clamped: Vec<f64> = img.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let out = Image::new(img.height(), img.width(), img.channels(), clamped)?;
    let tmp = tmp_sibling(path);
    io::save_image(&out, &tmp)?;
    fs::rename(&tmp, path).map_err(|source| Error::Unwritable {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text_atomic(text: &str, path: &Path) -> Result<()> {
    let tmp = tmp_sibling(path);
    fs::write(&tmp, text).map_err(|source| Error::Unwritable {
        path: tmp.clone(),
        source,
    })?;
    fs::rename(&tmp, path).map_err(|source| Error::Unwritable {
        path: path.to_path_buf(),
        source,
    })
}

fn tmp_sibling(path: &Path) -> PathBuf {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    path.with_file_name(format!(".tmp.{name}"))
}

/// Runs `f` over the items on a pool of `threads` workers; results keep
/// input order. Per-item work must be independent of scheduling.
fn parallel_map<T, R, F>(items: Vec<T>, threads: usize, f: F) -> Result<Vec<R>>
where
    T: Send + Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let n = items.len();
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<R>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads.min(n) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("worker filled slot"))
        .collect()
}

fn load_saliency(mask: &Option<PathBuf>, preset: Preset) -> Result<Option<BinaryMask>> {
    if !preset.needs_saliency() {
        return Ok(None);
    }
    match mask {
        Some(path) => Ok(Some(BinaryMask::load(path)?)),
        None => Err(Error::InvalidArgument(format!(
            "preset '{}' requires --mask with a saliency mask",
            preset.name()
        ))),
    }
}

fn resolve_energy(preset: Preset, cfg: &FileConfig) -> Result<ResolvedPreset> {
    let mut resolved = resolve_preset(preset);
    resolved.params = cfg.energy.apply(resolved.params);
    resolved.params.validate()?;
    if let Some(ed) = cfg.edge_detect {
        resolved.edge_detect = ed;
    }
    Ok(resolved)
}

pub struct SmoothOpts {
    pub input: PathBuf,
    pub output: PathBuf,
    pub solver: String,
    pub preset: Option<String>,
    pub config: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub seed: u64,
    pub threads: usize,
}

pub fn cmd_smooth(opts: &SmoothOpts) -> Result<()> {
    let cfg = match &opts.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let preset_name = opts
        .preset
        .clone()
        .or_else(|| cfg.preset.clone())
        .unwrap_or_else(|| "flatten".into());
    let preset = Preset::parse(&preset_name)?;
    let resolved = resolve_energy(preset, &cfg)?;

    match opts.solver.as_str() {
        "gd" | "irls" | "cnn" => {}
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown solver '{other}' (expected gd|irls|cnn)"
            )))
        }
    }
    if opts.solver == "irls" && preset == Preset::Detail {
        return Err(Error::InvalidArgument(
            "solver 'irls' cannot run the 'detail' preset: detail relies on dynamic \
             per-pixel p selection (c1=inf, c2=0) and the edge term, both gd-only; \
             use --solver gd"
                .into(),
        ));
    }
    if opts.solver == "cnn" && opts.model.is_none() {
        return Err(Error::InvalidArgument(
            "--solver cnn requires --model".into(),
        ));
    }

    let input = io::load_image(&opts.input)?;

    let (gd_cfg, irls_cfg) = (
        cfg.gd.apply(GdConfig::default()),
        cfg.irls.apply(IrlsConfig::default())?,
    );
    print_resolved(&ResolvedRun {
        command: "smooth",
        preset: preset.name(),
        energy: &resolved.params,
        edge_detect: &resolved.edge_detect,
        solver: Some(&opts.solver),
        p_mode: Some(match opts.solver.as_str() {
            "gd" => "dynamic",
            "irls" => pmode_name(&irls_cfg.p_mode),
            _ => "none",
        }),
        iterations: match opts.solver.as_str() {
            "gd" => Some(gd_cfg.iterations),
            "irls" => Some(irls_cfg.outer_iterations),
            _ => None,
        },
        learning_rate: (opts.solver == "gd").then_some(gd_cfg.learning_rate),
        seed: opts.seed,
        threads: opts.threads,
    });

    let (output, trace): (Image, Option<SolveTrace>) = match opts.solver.as_str() {
        "cnn" => {
            // One forward pass; no guidance inputs at test time.
            let mut net = load_model(opts.model.as_ref().unwrap())?;
            (net.forward_smooth(&input, false)?, None)
        }
        solver => {
            let saliency = load_saliency(&opts.mask, preset)?;
            let gi = prepare_guidance(&input, &resolved, saliency.as_ref())?;
            let ctx =
                EnergyContext::new(&input, &gi.guide, &gi.edges, resolved.params, gi.options)?;
            let (img, trace) = if solver == "gd" {
                solve_gd(&ctx, &input, &gd_cfg)?
            } else {
                solve_irls(&ctx, &irls_cfg)?
            };
            (img, Some(trace))
        }
    };

    write_image_atomic(&output, &opts.output)?;
    if let (Some(trace_path), Some(trace)) = (&opts.trace, &trace) {
        write_text_atomic(&trace.to_csv(), trace_path)?;
    }
    if let Some(trace) = &trace {
        let b = trace.final_breakdown();
        println!(
            "final-energy: total={:.6e} data={:.6e} flatten={:.6e} edge={:.6e}",
            b.total, b.data, b.flatten, b.edge
        );
    }
    println!("wrote {}", opts.output.display());
    Ok(())
}

pub struct TrainOpts {
    pub corpus: PathBuf,
    pub out: PathBuf,
    pub net: String,
    pub preset: Option<String>,
    pub config: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub crop: Option<usize>,
    pub learning_rate: Option<f64>,
    pub seed: Option<u64>,
    pub checkpoint_every: Option<usize>,
    pub steps_per_epoch: Option<usize>,
    pub overfit_single: Option<PathBuf>,
    pub threads: usize,
}

pub fn cmd_train(opts: &TrainOpts) -> Result<()> {
    let cfg = match &opts.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let kind = match opts.net.as_str() {
        "toy8" => PresetKind::Toy8,
        "paper26" => PresetKind::Paper26,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown network '{other}' (expected toy8|paper26)"
            )))
        }
    };
    let preset_name = opts
        .preset
        .clone()
        .or_else(|| cfg.preset.clone())
        .unwrap_or_else(|| "flatten".into());
    let preset = Preset::parse(&preset_name)?;
    let resolved = resolve_energy(preset, &cfg)?;

    let default_crop = if kind == PresetKind::Toy8 { 64 } else { 224 };
    let tc = TrainConfig {
        corpus_dir: opts.corpus.clone(),
        checkpoint_dir: opts.out.clone(),
        epochs: opts.epochs.or(cfg.train.epochs).unwrap_or(30),
        crop: opts.crop.or(cfg.train.crop).unwrap_or(default_crop),
        learning_rate: opts
            .learning_rate
            .or(cfg.train.learning_rate)
            .unwrap_or(0.01),
        seed: opts.seed.or(cfg.train.seed).unwrap_or(0),
        preset,
        checkpoint_every: opts
            .checkpoint_every
            .or(cfg.train.checkpoint_every)
            .unwrap_or(1),
        overfit_single: opts.overfit_single.clone(),
        steps_per_epoch: opts.steps_per_epoch.or(cfg.train.steps_per_epoch),
    };

    print_resolved(&ResolvedRun {
        command: "train",
        preset: preset.name(),
        energy: &resolved.params,
        edge_detect: &resolved.edge_detect,
        solver: Some(opts.net.as_str()),
        p_mode: Some("dynamic"),
        iterations: Some(tc.epochs),
        learning_rate: Some(tc.learning_rate),
        seed: tc.seed,
        threads: opts.threads,
    });

    let net = build(kind, tc.seed);
    let (mut trained, log) = train(net, &tc)?;

    fs::create_dir_all(&opts.out).map_err(|source| Error::Unwritable {
        path: opts.out.clone(),
        source,
    })?;
    let model_path = opts.out.join("model_final.usis");
    let tmp = tmp_sibling(&model_path);
    save_model(&trained, &tmp)?;
    fs::rename(&tmp, &model_path).map_err(|source| Error::Unwritable {
        path: model_path.clone(),
        source,
    })?;
    let meta = CheckpointMeta {
        epoch: tc.epochs,
        step: trained.step_count(),
        moments_digest: trained.moments_digest(),
        seed: tc.seed,
    };
    write_text_atomic(
        &serde_json::to_string_pretty(&meta).expect("meta serializes"),
        &model_path.with_extension("json"),
    )?;
    write_text_atomic(&train_log_csv(&log), &opts.out.join("train_log.csv"))?;

    if let Some(last) = log.last() {
        println!(
            "final-epoch mean: total={:.6e} data={:.6e} flatten={:.6e} edge={:.6e}",
            last.total, last.data, last.flatten, last.edge
        );
    }
    println!("wrote {}", model_path.display());
    Ok(())
}

pub struct EvalOpts {
    pub model: PathBuf,
    pub images: PathBuf,
    pub out: PathBuf,
    pub preset: Option<String>,
    pub threads: usize,
}

pub fn cmd_eval(opts: &EvalOpts) -> Result<()> {
    let preset = Preset::parse(opts.preset.as_deref().unwrap_or("flatten"))?;
    let resolved = resolve_preset(preset);
    let net = load_model(&opts.model)?;

    print_resolved(&ResolvedRun {
        command: "eval",
        preset: preset.name(),
        energy: &resolved.params,
        edge_detect: &resolved.edge_detect,
        solver: None,
        p_mode: None,
        iterations: None,
        learning_rate: None,
        seed: 0,
        threads: opts.threads,
    });

    let files = list_corpus(&opts.images)?;
    let rows: Vec<(PathBuf, EnergyBreakdown)> = parallel_map(files, opts.threads, |path| {
        let mut net = net.clone();
        let bd = trainer::evaluate_image(&mut net, path, &resolved)?;
        Ok((path.clone(), bd))
    })?;
    write_text_atomic(&evaluation_csv(&rows), &opts.out)?;
    println!("wrote {} ({} rows)", opts.out.display(), rows.len());
    Ok(())
}

pub struct PrecomputeOpts {
    pub corpus: PathBuf,
    pub preset: String,
    pub threads: usize,
}

pub fn cmd_precompute(opts: &PrecomputeOpts) -> Result<()> {
    let preset = Preset::parse(&opts.preset)?;
    let resolved = resolve_preset(preset);
    print_resolved(&ResolvedRun {
        command: "precompute",
        preset: preset.name(),
        energy: &resolved.params,
        edge_detect: &resolved.edge_detect,
        solver: None,
        p_mode: None,
        iterations: None,
        learning_rate: None,
        seed: 0,
        threads: opts.threads,
    });
    let index = precompute_targets(&opts.corpus, preset)?;
    println!(
        "precompute: {} images, {} cache hits, {} computed",
        index.entries.len(),
        index.cache_hits,
        index.cache_misses
    );
    Ok(())
}

pub struct CompareOpts {
    pub images: PathBuf,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub threads: usize,
}

const COMPARE_MODES: [&str; 4] = ["all_large", "all_small", "half_half", "dynamic"];
const COMPARE_SOLVERS: [&str; 3] = ["gd", "irls", "cnn_overfit"];

/// Overfits a fresh TOY8 network on one image; the loss-curve analogue
/// of a direct solve. Dynamic cells reselect the p-map per step.
fn cnn_overfit_trace(
    ctx: &EnergyContext,
    input: &Image,
    mode: &PMode,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<SolveTrace> {
    let mut net = build(PresetKind::Toy8, seed);
    let mut initial = None;
    let mut trace_steps = Vec::with_capacity(steps);
    for step in 0..=steps {
        let started = std::time::Instant::now();
        let t = net.forward_smooth(input, true)?;
        let (h, w) = (input.height(), input.width());
        let pmap = match mode {
            PMode::Dynamic => ctx.select_p(&t),
            PMode::AllLarge => PMap::uniform(h, w, Branch::Large),
            PMode::AllSmall => PMap::uniform(h, w, Branch::Small),
            PMode::HalfHalf => PMap::half_half(h, w),
            PMode::Frozen(p) => p.clone(),
        };
        let (bd, grad) = ctx.eval_with_grad(&t, &pmap)?;
        if !bd.is_finite() {
            return Err(Error::NonFiniteEnergy {
                iteration: step,
                iterations_run: step.saturating_sub(1),
            });
        }
        if step == 0 {
            initial = Some(bd);
        } else {
            trace_steps.push(TraceStep {
                breakdown: bd,
                ms: started.elapsed().as_secs_f64() * 1e3,
                pmap_flips: 0.0,
            });
        }
        if step < steps {
            net.zero_grad();
            net.backward(&Tensor::from_image(&grad))?;
            net.adam_step(lr, 0.9, 0.999, 1e-8);
        }
    }
    Ok(SolveTrace {
        initial: initial.expect("step 0 ran"),
        steps: trace_steps,
    })
}

pub fn cmd_compare_solvers(opts: &CompareOpts) -> Result<()> {
    let cfg = match &opts.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let resolved = resolve_energy(Preset::Flatten, &cfg)?;
    let gd_cfg = cfg.gd.apply(GdConfig::default());
    let irls_cfg = cfg.irls.apply(IrlsConfig::default())?;

    print_resolved(&ResolvedRun {
        command: "compare-solvers",
        preset: "flatten",
        energy: &resolved.params,
        edge_detect: &resolved.edge_detect,
        solver: Some("gd+irls+cnn_overfit"),
        p_mode: Some("all_large|all_small|half_half|dynamic"),
        iterations: Some(gd_cfg.iterations),
        learning_rate: Some(gd_cfg.learning_rate),
        seed: opts.seed,
        threads: opts.threads,
    });

    let files = list_corpus(&opts.images)?;
    fs::create_dir_all(&opts.out).map_err(|source| Error::Unwritable {
        path: opts.out.clone(),
        source,
    })?;

    // One work item per image; each produces the finals of every cell.
    struct ImageFinals {
        finals: Vec<Option<f64>>, // indexed solver * modes + mode
    }
    let params = resolved.params;
    let out_dir = opts.out.clone();
    let results: Vec<ImageFinals> = parallel_map(files, opts.threads, |path| {
        let input = io::load_image(path)?;
        // The comparison isolates data + flattening: B is empty in every
        // cell so all three solvers optimize the same objective.
        let guide = edge_response(&input, Neighborhood::Four);
        let edges = BinaryMask::empty(input.height(), input.width());
        let ctx = EnergyContext::new(&input, &guide, &edges, params, ContextOptions::new())?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image")
            .to_string();
        let mut finals = Vec::new();
        for solver in COMPARE_SOLVERS {
            for mode_name in COMPARE_MODES {
                let mode = parse_pmode(mode_name)?;
                if solver == "irls" && matches!(mode, PMode::Dynamic) {
                    finals.push(None); // recorded as skipped
                    continue;
                }
                let trace = match solver {
                    "gd" => {
                        let cfg = GdConfig {
                            p_mode: mode,
                            ..gd_cfg.clone()
                        };
                        solve_gd(&ctx, &input, &cfg)?.1
                    }
                    "irls" => {
                        let cfg = IrlsConfig {
                            p_mode: mode,
                            ..irls_cfg.clone()
                        };
                        solve_irls(&ctx, &cfg)?.1
                    }
                    _ => cnn_overfit_trace(
                        &ctx,
                        &input,
                        &mode,
                        gd_cfg.iterations,
                        gd_cfg.learning_rate,
                        opts.seed,
                    )?,
                };
                let csv_path = out_dir.join(format!("{solver}__{mode_name}__{stem}.csv"));
                write_text_atomic(&trace.to_csv(), &csv_path)?;
                finals.push(Some(trace.final_breakdown().total));
            }
        }
        Ok(ImageFinals { finals })
    })?;

    // Summary has one row per executed cell; inapplicable cells are
    // recorded in a separate skip list.
    let mut summary = String::from("solver,mode,mean_final_total\n");
    let mut skipped = Vec::new();
    let n_images = results.len() as f64;
    for (si, solver) in COMPARE_SOLVERS.iter().enumerate() {
        for (mi, mode) in COMPARE_MODES.iter().enumerate() {
            let idx = si * COMPARE_MODES.len() + mi;
            if results.iter().any(|r| r.finals[idx].is_none()) {
                skipped.push(format!("{solver},{mode}"));
            } else {
                let mean: f64 =
                    results.iter().map(|r| r.finals[idx].unwrap()).sum::<f64>() / n_images;
                summary.push_str(&format!("{solver},{mode},{mean:.12e}\n"));
            }
        }
    }
    write_text_atomic(&summary, &opts.out.join("summary.csv"))?;
    write_text_atomic(
        &(skipped.join("\n") + "\n"),
        &opts.out.join("skipped.csv"),
    )?;
    println!(
        "wrote {} ({} cells, {} skipped)",
        opts.out.join("summary.csv").display(),
        SUMMARY_CELLS - skipped.len(),
        skipped.len()
    );
    Ok(())
}

/// Classifies an error into the documented exit codes: 2 = bad
/// flags/parameters, 3 = I/O or format, 4 = solver failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_)
        | Error::InvalidParams(_)
        | Error::DimensionMismatch(_)
        | Error::Corpus(_) => 2,
        Error::NonFiniteEnergy { .. } | Error::CgDiverged { .. } => 4,
        _ => 3,
    }
}

const SUMMARY_CELLS: usize = COMPARE_SOLVERS.len() * COMPARE_MODES.len();
