//! Properties of the IRLS solver: majorizer tangency/domination, outer
//! loop monotonicity, and exactness on the quadratic (p = 2) problem.

mod common;

use common::random_image;

use proptest::prelude::*;
use smoothlab_core::energy::{Branch, ContextOptions, EnergyContext, EnergyParams, PMap};
use smoothlab_core::guidance::edge_response;
use smoothlab_core::solvers::{majorizer_gap, majorizer_weight, solve_irls, IrlsConfig};
use smoothlab_core::{BinaryMask, Neighborhood, PMode};

fn context_parts(h: usize, w: usize) -> (BinaryMask, EnergyParams) {
    (
        BinaryMask::empty(h, w),
        EnergyParams {
            h: 5,
            ..EnergyParams::default()
        },
    )
}

#[test]
fn irls_monotone_on_random_instances() {
    for case in 0..5 {
        let img = random_image(10, 10, 3, 100 + case);
        let guide = edge_response(&img, Neighborhood::Four);
        let (b, params) = context_parts(10, 10);
        let ctx = EnergyContext::new(&img, &guide, &b, params, ContextOptions::new()).unwrap();
        let (_, trace) = solve_irls(&ctx, &IrlsConfig::default()).unwrap();
        let mut prev = trace.initial.total;
        for (k, step) in trace.steps.iter().enumerate() {
            assert!(
                step.breakdown.total <= prev + 1e-8,
                "case {case} outer {k}: {prev} -> {}",
                step.breakdown.total
            );
            prev = step.breakdown.total;
        }
        // IRLS ignores the edge term; the trace must reflect that.
        assert_eq!(trace.initial.edge, 0.0);
    }
}

#[test]
fn quadratic_case_converges_in_one_outer_iteration() {
    // With p = 2 the surrogate is the objective itself, so outer
    // iterations beyond the first cannot improve the solution.
    let img = random_image(9, 9, 3, 7);
    let guide = edge_response(&img, Neighborhood::Four);
    let (b, params) = context_parts(9, 9);
    let ctx = EnergyContext::new(&img, &guide, &b, params, ContextOptions::new()).unwrap();
    let one = IrlsConfig {
        outer_iterations: 1,
        cg_tol: 1e-12,
        p_mode: PMode::AllLarge,
        ..IrlsConfig::default()
    };
    let five = IrlsConfig {
        outer_iterations: 5,
        ..one.clone()
    };
    let (_, t1) = solve_irls(&ctx, &one).unwrap();
    let (_, t5) = solve_irls(&ctx, &five).unwrap();
    let e1 = t1.final_breakdown().total;
    let e5 = t5.final_breakdown().total;
    assert!(
        (e1 - e5).abs() <= 1e-9 * e1.abs().max(1.0),
        "one outer iteration not optimal: {e1} vs {e5}"
    );
}

#[test]
fn all_large_matches_dense_normal_equations() {
    // Dense direct solve of (Id + lambda_f * L) t = i per channel, with
    // L assembled from the same symmetrized pair weights.
    let img = random_image(8, 8, 3, 42);
    let guide = edge_response(&img, Neighborhood::Four);
    let (b, params) = context_parts(8, 8);
    let ctx = EnergyContext::new(&img, &guide, &b, params, ContextOptions::new()).unwrap();
    let config = IrlsConfig {
        outer_iterations: 1,
        cg_tol: 1e-12,
        p_mode: PMode::AllLarge,
        ..IrlsConfig::default()
    };
    let (t, _) = solve_irls(&ctx, &config).unwrap();

    let n = 64;
    let lf = ctx.params().lambda_f;
    let pmap = PMap::uniform(8, 8, Branch::Large);
    let mut a = nalgebra::DMatrix::<f64>::identity(n, n);
    ctx.visit_pairs(&pmap, |i, j, _, _, _, wgt| {
        a[(i, i)] += lf * wgt;
        a[(i, j)] -= lf * wgt;
        a[(j, j)] += lf * wgt;
        a[(j, i)] -= lf * wgt;
    });
    let lu = a.lu();
    for c in 0..3 {
        let rhs = nalgebra::DVector::<f64>::from_column_slice(img.channel(c));
        let x = lu.solve(&rhs).unwrap();
        for k in 0..n {
            assert!(
                (t.channel(c)[k] - x[k]).abs() < 1e-7,
                "channel {c} pixel {k}: {} vs {}",
                t.channel(c)[k],
                x[k]
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// The quadratic surrogate touches |d|^p_eps at the expansion point
    /// and dominates it everywhere (p <= 2).
    #[test]
    fn majorizer_tangent_and_dominating(
        d in -3.0f64..3.0,
        d0 in -3.0f64..3.0,
        p in prop_oneof![Just(0.8), Just(0.5), Just(1.0), Just(2.0)],
    ) {
        let eps = 1e-4;
        prop_assert!(majorizer_gap(d0, d0, p, eps).abs() < 1e-10);
        prop_assert!(majorizer_gap(d, d0, p, eps) >= -1e-10);
    }

    /// The majorizer weight is positive and decreasing in |d0| for p < 2.
    #[test]
    fn majorizer_weight_monotone(d0 in 0.0f64..2.0) {
        let eps = 1e-4;
        let w_near = majorizer_weight(d0, 0.8, eps);
        let w_far = majorizer_weight(d0 + 0.5, 0.8, eps);
        prop_assert!(w_near > 0.0);
        prop_assert!(w_far < w_near);
    }
}
