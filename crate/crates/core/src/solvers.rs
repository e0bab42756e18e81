//! Direct minimizers of the smoothing energy.
//!
//! Two solvers share the same [`EnergyContext`]:
//!
//! * [`solve_gd`]: Adam gradient descent on the full objective. The
//!   p-map may be recomputed every few iterations (dynamic branch
//!   selection) or held at a fixed pattern.
//! * [`solve_irls`]: iteratively reweighted least squares on the data +
//!   flattening terms only, with a fixed p-map. Each outer iteration
//!   replaces |d|^p by its quadratic majorizer at the current iterate and
//!   solves the resulting SPD system per channel with Jacobi-preconditioned
//!   conjugate gradients.
//!
//! Both return a [`SolveTrace`] with the energy breakdown per iteration.

use std::time::Instant;

use crate::energy::{Branch, EnergyBreakdown, EnergyContext, PMap};
use crate::error::{Error, Result};
use crate::image::Image;

/// Fixed or dynamic branch-selection policy.
#[derive(Debug, Clone)]
pub enum PMode {
    /// Recompute the p-map from the current iterate (gradient descent only).
    Dynamic,
    AllLarge,
    AllSmall,
    /// Left half p_large, right half p_small.
    HalfHalf,
    /// Caller-supplied map, never recomputed.
    Frozen(PMap),
}

impl PMode {
    fn resolve(&self, ctx: &EnergyContext, t: &Image) -> Result<PMap> {
        let (h, w) = (t.height(), t.width());
        Ok(match self {
            PMode::Dynamic => ctx.select_p(t),
            PMode::AllLarge => PMap::uniform(h, w, Branch::Large),
            PMode::AllSmall => PMap::uniform(h, w, Branch::Small),
            PMode::HalfHalf => PMap::half_half(h, w),
            PMode::Frozen(p) => {
                if p.height() != h || p.width() != w {
                    return Err(Error::DimensionMismatch("frozen p-map vs image".into()));
                }
                p.clone()
            }
        })
    }
}

/// Adam gradient-descent settings.
#[derive(Debug, Clone)]
pub struct GdConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub iterations: usize,
    /// Recompute the dynamic p-map every this many iterations.
    pub pmap_refresh: usize,
    pub p_mode: PMode,
}

impl Default for GdConfig {
    fn default() -> Self {
        GdConfig {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            iterations: 100,
            pmap_refresh: 1,
            p_mode: PMode::Dynamic,
        }
    }
}

/// IRLS settings. The p-map must be fixed; `Dynamic` is rejected.
#[derive(Debug, Clone)]
pub struct IrlsConfig {
    pub outer_iterations: usize,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub p_mode: PMode,
}

impl Default for IrlsConfig {
    fn default() -> Self {
        IrlsConfig {
            outer_iterations: 10,
            cg_tol: 1e-6,
            cg_max_iters: 1000,
            p_mode: PMode::AllSmall,
        }
    }
}

/// One per-iteration trace record.
#[derive(Debug, Clone, Copy)]
pub struct TraceStep {
    pub breakdown: EnergyBreakdown,
    /// Wall-clock milliseconds spent on this iteration.
    pub ms: f64,
    /// Fraction of pixels whose regularizer branch changed when the
    /// p-map was refreshed this iteration (0 under fixed p-maps).
    pub pmap_flips: f64,
}

/// Energy evolution over a solve: the breakdown at the starting point
/// plus one record per iteration.
#[derive(Debug, Clone)]
pub struct SolveTrace {
    pub initial: EnergyBreakdown,
    pub steps: Vec<TraceStep>,
}

impl SolveTrace {
    pub fn csv_header() -> &'static str {
        "iter,total,data,flatten,edge,ms"
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::csv_header());
        out.push('\n');
        out.push_str(&self.initial.csv_row(0));
        out.push_str(",0.000\n");
        for (k, step) in self.steps.iter().enumerate() {
            out.push_str(&step.breakdown.csv_row(k + 1));
            out.push_str(&format!(",{:.3}\n", step.ms));
        }
        out
    }

    pub fn final_breakdown(&self) -> EnergyBreakdown {
        self.steps
            .last()
            .map(|s| s.breakdown)
            .unwrap_or(self.initial)
    }
}

/// Minimizes the full energy with Adam, starting from `t0`.
pub fn solve_gd(ctx: &EnergyContext, t0: &Image, config: &GdConfig) -> Result<(Image, SolveTrace)> {
    if config.pmap_refresh == 0 {
        return Err(Error::InvalidParams("pmap_refresh must be >= 1".into()));
    }
    if !t0.same_shape(ctx.input()) {
        return Err(Error::DimensionMismatch("t0 vs input".into()));
    }
    let mut t = t0.clone().into_unclamped();
    let mut pmap = config.p_mode.resolve(ctx, &t)?;
    let (initial, mut grad) = ctx.eval_with_grad(&t, &pmap)?;
    if !initial.is_finite() {
        return Err(Error::NonFiniteEnergy {
            iteration: 0,
            iterations_run: 0,
        });
    }

    let n = t.data().len();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut steps = Vec::with_capacity(config.iterations);

    for iter in 1..=config.iterations {
        let started = Instant::now();
        {
            let g = grad.data();
            let td = t.data_mut();
            let bc1 = 1.0 - config.beta1.powi(iter as i32);
            let bc2 = 1.0 - config.beta2.powi(iter as i32);
            for k in 0..n {
                m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
                v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                td[k] -= config.learning_rate * mhat / (vhat.sqrt() + config.adam_eps);
            }
        }
        let mut pmap_flips = 0.0;
        if matches!(config.p_mode, PMode::Dynamic) && iter % config.pmap_refresh == 0 {
            let refreshed = ctx.select_p(&t);
            pmap_flips = refreshed.flip_fraction(&pmap);
            pmap = refreshed;
        }
        let (breakdown, g) = ctx.eval_with_grad(&t, &pmap)?;
        if !breakdown.is_finite() {
            return Err(Error::NonFiniteEnergy {
                iteration: iter,
                iterations_run: iter - 1,
            });
        }
        grad = g;
        steps.push(TraceStep {
            breakdown,
            ms: started.elapsed().as_secs_f64() * 1e3,
            pmap_flips,
        });
    }
    Ok((t, SolveTrace { initial, steps }))
}

/// Majorizer weight omega(d0) = (p/2) * (d0^2 + eps^2)^{(p-2)/2}.
#[inline]
pub fn majorizer_weight(d0: f64, p: f64, eps: f64) -> f64 {
    (p * 0.5) * (d0 * d0 + eps * eps).powf(p * 0.5 - 1.0)
}

/// Surrogate-minus-true gap of the quadratic majorizer of
/// s(d) = (d^2 + eps^2)^{p/2} - eps^p anchored at d0. Nonnegative for
/// p <= 2, zero at d = d0.
pub fn majorizer_gap(d: f64, d0: f64, p: f64, eps: f64) -> f64 {
    let s = |x: f64| (x * x + eps * eps).powf(p * 0.5) - eps.powf(p);
    let omega = majorizer_weight(d0, p, eps);
    s(d0) + omega * (d * d - d0 * d0) - s(d)
}

/// Minimizes data + flattening with a fixed p-map via IRLS. The edge
/// term is ignored; traces report it as zero.
pub fn solve_irls(ctx: &EnergyContext, config: &IrlsConfig) -> Result<(Image, SolveTrace)> {
    if matches!(config.p_mode, PMode::Dynamic) {
        return Err(Error::InvalidParams(
            "irls requires a fixed p-map (dynamic selection is gd-only)".into(),
        ));
    }
    let input = ctx.input();
    let (h, w, nch) = (input.height(), input.width(), input.channels());
    let npix = h * w;
    let lambda_f = ctx.params().lambda_f;
    let eps = ctx.params().eps;
    let mut t = input.clone().into_unclamped();
    let pmap = config.p_mode.resolve(ctx, &t)?;

    let no_edge = |b: EnergyBreakdown| EnergyBreakdown {
        data: b.data,
        flatten: b.flatten,
        edge: 0.0,
        total: b.data + lambda_f * b.flatten,
    };
    let initial = no_edge(ctx.eval(&t, &pmap)?);
    if !initial.is_finite() {
        return Err(Error::NonFiniteEnergy {
            iteration: 0,
            iterations_run: 0,
        });
    }

    let win = 2 * ctx.window_radius() + 1;
    let stride = win * win;
    let r = ctx.window_radius() as isize;
    // Symmetrized surrogate coefficients s_kj = a_kj + a_jk per channel,
    // indexed by anchor pixel and window offset.
    let mut s = vec![vec![0.0f64; npix * stride]; nch];
    let mut steps = Vec::with_capacity(config.outer_iterations);

    for outer in 1..=config.outer_iterations {
        let started = Instant::now();
        for plane in s.iter_mut() {
            plane.iter_mut().for_each(|v| *v = 0.0);
        }
        ctx.visit_pairs(&pmap, |i, j, dy, dx, p, wgt| {
            if wgt == 0.0 {
                return;
            }
            let fwd = ((dy + r) as usize) * win + (dx + r) as usize;
            let bwd = ((-dy + r) as usize) * win + (-dx + r) as usize;
            for (c, plane) in s.iter_mut().enumerate() {
                let tc = t.channel(c);
                let a = wgt * majorizer_weight(tc[i] - tc[j], p, eps);
                plane[i * stride + fwd] += a;
                plane[j * stride + bwd] += a;
            }
        });

        for (c, plane) in s.iter().enumerate() {
            let b = input.channel(c);
            let x = solve_channel_cg(
                plane, h, w, win, lambda_f, b,
                t.channel(c), config.cg_tol, config.cg_max_iters,
            )?;
            t.channel_mut(c).copy_from_slice(&x);
        }

        let breakdown = no_edge(ctx.eval(&t, &pmap)?);
        if !breakdown.is_finite() {
            return Err(Error::NonFiniteEnergy {
                iteration: outer,
                iterations_run: outer - 1,
            });
        }
        steps.push(TraceStep {
            breakdown,
            ms: started.elapsed().as_secs_f64() * 1e3,
            pmap_flips: 0.0,
        });
    }
    Ok((t, SolveTrace { initial, steps }))
}

/// Applies A x = x + lambda_f * L x where (L x)_k = sum_j s_kj (x_k - x_j).
fn apply_system(
    s: &[f64],
    h: usize,
    w: usize,
    win: usize,
    lambda_f: f64,
    x: &[f64],
    out: &mut [f64],
) {
    let r = (win / 2) as isize;
    let stride = win * win;
    for y in 0..h {
        for xx in 0..w {
            let k = y * w + xx;
            let row = &s[k * stride..(k + 1) * stride];
            let mut acc = 0.0;
            for dy in -r..=r {
                let ny = y as isize + dy;
                if ny < 0 || ny as usize >= h {
                    continue;
                }
                for dx in -r..=r {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let nx = xx as isize + dx;
                    if nx < 0 || nx as usize >= w {
                        continue;
                    }
                    let skj = row[((dy + r) as usize) * win + (dx + r) as usize];
                    if skj == 0.0 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    acc += skj * (x[k] - x[j]);
                }
            }
            out[k] = x[k] + lambda_f * acc;
        }
    }
}

/// Jacobi-preconditioned CG for the SPD surrogate system.
#[allow(clippy::too_many_arguments)]
fn solve_channel_cg(
    s: &[f64],
    h: usize,
    w: usize,
    win: usize,
    lambda_f: f64,
    b: &[f64],
    x0: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<Vec<f64>> {
    let n = h * w;
    let stride = win * win;
    // diag(A)_k = 1 + lambda_f * sum_j s_kj.
    let mut inv_diag = vec![0.0; n];
    for k in 0..n {
        let row_sum: f64 = s[k * stride..(k + 1) * stride].iter().sum();
        inv_diag[k] = 1.0 / (1.0 + lambda_f * row_sum);
    }

    let mut x = x0.to_vec();
    let mut ax = vec![0.0; n];
    apply_system(s, h, w, win, lambda_f, &x, &mut ax);
    let mut rvec: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let mut z: Vec<f64> = rvec.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz: f64 = rvec.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut resid = rvec.iter().map(|v| v * v).sum::<f64>().sqrt();
    if resid / bnorm <= tol {
        return Ok(x);
    }

    for _ in 0..max_iters {
        apply_system(s, h, w, win, lambda_f, &p, &mut ax);
        let pap: f64 = p.iter().zip(&ax).map(|(a, b)| a * b).sum();
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::CgDiverged {
                max_iters,
                residual: resid / bnorm,
            });
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            rvec[k] -= alpha * ax[k];
        }
        resid = rvec.iter().map(|v| v * v).sum::<f64>().sqrt();
        if resid / bnorm <= tol {
            return Ok(x);
        }
        for k in 0..n {
            z[k] = rvec[k] * inv_diag[k];
        }
        let rz_new: f64 = rvec.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(Error::CgDiverged {
        max_iters,
        residual: resid / bnorm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{ContextOptions, EnergyParams};
    use crate::guidance::{self, BinaryMask, Neighborhood};
    use crate::rng::Rng;

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
        let mut rng = Rng::new(seed);
        let data = (0..h * w * c).map(|_| rng.next_f64()).collect();
        Image::new(h, w, c, data).unwrap()
    }

    fn context_parts(img: &Image) -> (guidance::GuidanceMap, BinaryMask, EnergyParams) {
        let guide = guidance::edge_response(img, Neighborhood::Four);
        let b = BinaryMask::empty(img.height(), img.width());
        let params = EnergyParams {
            h: 3,
            ..EnergyParams::default()
        };
        (guide, b, params)
    }

    #[test]
    fn majorizer_weight_oracle() {
        // omega(0.1) for p = 0.8, eps = 1e-4:
        // 0.4 * (0.01 + 1e-8)^{-0.6} ~= 6.339.
        let w = majorizer_weight(0.1, 0.8, 1e-4);
        let want = 0.4 * (0.01f64 + 1e-8).powf(-0.6);
        assert!((w - want).abs() < 1e-12);
        assert!((w - 6.34).abs() < 0.01, "got {w}");
    }

    #[test]
    fn majorizer_tangent_and_dominating() {
        let (p, eps) = (0.8, 1e-4);
        for &d0 in &[0.01, 0.1, 0.5, 1.0] {
            assert!(majorizer_gap(d0, d0, p, eps).abs() < 1e-12);
            for &d in &[0.0, 0.05, 0.3, 0.9, 2.0] {
                let gap = majorizer_gap(d, d0, p, eps);
                assert!(gap >= -1e-12, "gap {gap} at d={d}, d0={d0}");
            }
        }
    }

    #[test]
    fn gd_decreases_energy() {
        let img = random_image(8, 8, 3, 21);
        let (guide, b, params) = context_parts(&img);
        let ctx = EnergyContext::new(&img, &guide, &b, params, ContextOptions::new()).unwrap();
        let config = GdConfig {
            iterations: 20,
            p_mode: PMode::AllSmall,
            ..GdConfig::default()
        };
        let (_, trace) = solve_gd(&ctx, &img, &config).unwrap();
        assert_eq!(trace.steps.len(), 20);
        let last = trace.final_breakdown().total;
        assert!(
            last < trace.initial.total,
            "no decrease: {} -> {last}",
            trace.initial.total
        );
    }

    #[test]
    fn irls_monotone_decrease() {
        let img = random_image(8, 8, 3, 22);
        let (guide, b, params) = context_parts(&img);
        let ctx = EnergyContext::new(&img, &guide, &b, params, ContextOptions::new()).unwrap();
        let config = IrlsConfig {
            outer_iterations: 6,
            ..IrlsConfig::default()
        };
        let (_, trace) = solve_irls(&ctx, &config).unwrap();
        let mut prev = trace.initial.total;
        for step in &trace.steps {
            assert!(
                step.breakdown.total <= prev + 1e-10,
                "objective rose: {prev} -> {}",
                step.breakdown.total
            );
            prev = step.breakdown.total;
        }
    }

    #[test]
    fn irls_rejects_dynamic_pmode() {
        let img = random_image(4, 4, 3, 23);
        let (guide, b, params) = context_parts(&img);
        let ctx = EnergyContext::new(&img, &guide, &b, params, ContextOptions::new()).unwrap();
        let config = IrlsConfig {
            p_mode: PMode::Dynamic,
            ..IrlsConfig::default()
        };
        assert!(matches!(
            solve_irls(&ctx, &config),
            Err(Error::InvalidParams(_))
        ));
    }

    #[test]
    fn irls_all_large_matches_dense_solve() {
        // With p = 2 everywhere the surrogate is exact, so one IRLS outer
        // iteration solves the quadratic problem; compare against a dense
        // direct solve of the same normal equations.
        let img = random_image(5, 5, 1, 24);
        let (guide, b, params) = context_parts(&img);
        let ctx = EnergyContext::new(&img, &guide, &b, params, ContextOptions::new()).unwrap();
        let config = IrlsConfig {
            outer_iterations: 1,
            cg_tol: 1e-12,
            p_mode: PMode::AllLarge,
            ..IrlsConfig::default()
        };
        let (t, _) = solve_irls(&ctx, &config).unwrap();

        let n = 25;
        let pmap = PMap::uniform(5, 5, Branch::Large);
        let mut a = nalgebra::DMatrix::<f64>::identity(n, n);
        ctx.visit_pairs(&pmap, |i, j, _, _, p, wgt| {
            // p = 2: omega = 1, s_kj contribution symmetric.
            assert_eq!(p, 2.0);
            let lf = ctx.params().lambda_f;
            a[(i, i)] += lf * wgt;
            a[(i, j)] -= lf * wgt;
            a[(j, j)] += lf * wgt;
            a[(j, i)] -= lf * wgt;
        });
        let rhs = nalgebra::DVector::<f64>::from_column_slice(img.channel(0));
        let x = a.lu().solve(&rhs).unwrap();
        for k in 0..n {
            assert!(
                (t.channel(0)[k] - x[k]).abs() < 1e-8,
                "pixel {k}: {} vs {}",
                t.channel(0)[k],
                x[k]
            );
        }
    }

    #[test]
    fn trace_csv_shape() {
        let img = random_image(4, 4, 1, 25);
        let (guide, b, params) = context_parts(&img);
        let ctx = EnergyContext::new(&img, &guide, &b, params, ContextOptions::new()).unwrap();
        let config = GdConfig {
            iterations: 3,
            ..GdConfig::default()
        };
        let (_, trace) = solve_gd(&ctx, &img, &config).unwrap();
        let csv = trace.to_csv();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines[0], "iter,total,data,flatten,edge,ms");
        assert_eq!(lines.len(), 5); // header + initial + 3 steps
        assert!(lines[1].starts_with("0,"));
        assert!(lines[4].starts_with("3,"));
    }

    #[test]
    fn gd_constant_image_stays_near_constant() {
        // A constant image is a global minimum (every term is zero).
        let img = Image::new(6, 6, 3, vec![0.5; 108]).unwrap();
        let (guide, b, params) = context_parts(&img);
        let ctx = EnergyContext::new(&img, &guide, &b, params, ContextOptions::new()).unwrap();
        let config = GdConfig {
            iterations: 5,
            ..GdConfig::default()
        };
        let (t, trace) = solve_gd(&ctx, &img, &config).unwrap();
        assert!(trace.final_breakdown().total < 1e-10);
        for v in t.data() {
            assert!((v - 0.5).abs() < 1e-6);
        }
    }
}
