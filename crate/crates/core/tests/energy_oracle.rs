//! Cross-checks the production energy against the brute-force oracle in
//! `common`, over randomized shapes, parameters and masks, plus finite
//! difference validation of the analytic gradient.

mod common;

use common::{oracle_energy, random_image, random_mask, rel_diff};

use proptest::prelude::*;
use smoothlab_core::energy::{total_energy, ContextOptions, EnergyContext, EnergyParams};
use smoothlab_core::guidance::edge_response;
use smoothlab_core::{BinaryMask, Image, Neighborhood, Rng};

/// Random parameter draw that exercises both regularizer branches.
fn random_params(rng: &mut Rng) -> EnergyParams {
    let c1_choices = [0.5, 2.0, 20.0, f64::INFINITY];
    let c2_choices = [0.0, 0.2, 1.0, 10.0];
    let h_choices = [3usize, 5, 7, 9];
    EnergyParams {
        lambda_f: 0.5 + rng.next_f64(),
        lambda_e: 0.05 + 0.2 * rng.next_f64(),
        sigma_r: 0.05 + 0.3 * rng.next_f64(),
        sigma_s: 2.0 + 8.0 * rng.next_f64(),
        alpha: 1.0 + 10.0 * rng.next_f64(),
        c1: c1_choices[rng.next_below(4)],
        c2: c2_choices[rng.next_below(4)],
        h: h_choices[rng.next_below(4)],
        ..EnergyParams::default()
    }
}

#[test]
fn total_energy_matches_oracle_randomized() {
    let mut rng = Rng::new(0xfeed);
    for case in 0..60 {
        let h = 2 + rng.next_below(15);
        let w = 2 + rng.next_below(15);
        let i = random_image(h, w, 3, 1000 + case);
        let t = random_image(h, w, 3, 2000 + case);
        let b = random_mask(h, w, rng.next_f64(), 3000 + case);
        let prm = random_params(&mut rng);

        let guide = edge_response(&i, Neighborhood::Four);
        let got = total_energy(&t, &i, &b, &guide, &prm).unwrap();
        let want = oracle_energy(&t, &i, &b, &prm);
        assert!(
            rel_diff(got.data, want.data) < 1e-10,
            "case {case}: data {} vs {}",
            got.data,
            want.data
        );
        assert!(
            rel_diff(got.flatten, want.flatten) < 1e-10,
            "case {case}: flatten {} vs {}",
            got.flatten,
            want.flatten
        );
        assert!(
            rel_diff(got.edge, want.edge) < 1e-10,
            "case {case}: edge {} vs {}",
            got.edge,
            want.edge
        );
        assert!(
            rel_diff(got.total, want.total) < 1e-10,
            "case {case}: total {} vs {}",
            got.total,
            want.total
        );
    }
}

#[test]
fn single_channel_images_match_oracle() {
    let mut rng = Rng::new(0xabcd);
    for case in 0..10 {
        let i = random_image(7, 9, 1, 4000 + case);
        let t = random_image(7, 9, 1, 5000 + case);
        let b = random_mask(7, 9, 0.4, 6000 + case);
        let prm = random_params(&mut rng);
        let guide = edge_response(&i, Neighborhood::Four);
        let got = total_energy(&t, &i, &b, &guide, &prm).unwrap();
        let want = oracle_energy(&t, &i, &b, &prm);
        assert!(rel_diff(got.total, want.total) < 1e-10);
    }
}

/// Central finite differences of the evaluated energy under a frozen
/// p-map, against the analytic gradient. `prm.eps` must be much larger
/// than the 1e-4 step: the flattening penalty's curvature scale is eps,
/// and central differences only see the analytic derivative once the
/// step resolves that scale.
fn check_gradient(i: &Image, t: &Image, b: &BinaryMask, prm: EnergyParams, tol: f64) -> f64 {
    let guide = edge_response(i, Neighborhood::Four);
    let ctx = EnergyContext::new(i, &guide, b, prm, ContextOptions::new()).unwrap();
    let pmap = ctx.select_p(t);
    let (_, grad) = ctx.eval_with_grad(t, &pmap).unwrap();

    let near_kink = common::kink_pixels(t, b, 50.0 * prm.eps);
    let step = 1e-4;
    let mut max_rel = 0.0f64;
    let mut probe = t.clone().into_unclamped();
    for k in 0..probe.data().len() {
        if near_kink[k % (t.height() * t.width())] {
            continue;
        }
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + step;
        let up = ctx.eval(&probe, &pmap).unwrap().total;
        probe.data_mut()[k] = orig - step;
        let dn = ctx.eval(&probe, &pmap).unwrap().total;
        probe.data_mut()[k] = orig;
        let fd = (up - dn) / (2.0 * step);
        let an = grad.data()[k];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
        max_rel = max_rel.max(rel);
        assert!(
            rel < tol,
            "component {k}: fd {fd} vs analytic {an} (rel {rel})"
        );
    }
    max_rel
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = Rng::new(0x9d0f);
    for case in 0..6 {
        let i = random_image(6, 6, 3, 7000 + case);
        let t = random_image(6, 6, 3, 8000 + case);
        let b = random_mask(6, 6, 0.4, 9000 + case);
        let prm = EnergyParams {
            eps: 1e-2,
            ..random_params(&mut rng)
        };
        check_gradient(&i, &t, &b, prm, 1e-3);
    }
}

#[test]
fn gradient_handles_empty_mask() {
    let i = random_image(6, 6, 3, 71);
    let t = random_image(6, 6, 3, 72);
    let b = BinaryMask::empty(6, 6);
    let prm = EnergyParams {
        eps: 1e-2,
        ..EnergyParams::default()
    };
    check_gradient(&i, &t, &b, prm, 1e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Production vs oracle on tiny proptest-driven instances.
    #[test]
    fn oracle_agreement_prop(seed in 0u64..1u64 << 48, h in 2usize..7, w in 2usize..7) {
        let i = random_image(h, w, 3, seed);
        let t = random_image(h, w, 3, seed ^ 0xffff);
        let b = random_mask(h, w, 0.5, seed ^ 0xaaaa);
        let prm = EnergyParams { h: 3, c1: 1.0, c2: 0.1, ..EnergyParams::default() };
        let guide = edge_response(&i, Neighborhood::Four);
        let got = total_energy(&t, &i, &b, &guide, &prm).unwrap();
        let want = oracle_energy(&t, &i, &b, &prm);
        prop_assert!(rel_diff(got.total, want.total) < 1e-10);
    }

    /// Terms are nonnegative and the identity output zeroes data + edge.
    #[test]
    fn term_invariants_prop(seed in 0u64..1u64 << 48) {
        let i = random_image(5, 5, 3, seed);
        let t = random_image(5, 5, 3, seed ^ 1);
        let b = random_mask(5, 5, 0.3, seed ^ 2);
        let prm = EnergyParams { h: 3, ..EnergyParams::default() };
        let guide = edge_response(&i, Neighborhood::Four);
        let bd = total_energy(&t, &i, &b, &guide, &prm).unwrap();
        prop_assert!(bd.data >= 0.0 && bd.flatten >= 0.0 && bd.edge >= 0.0);
        prop_assert!(bd.total.is_finite());

        let at_input = total_energy(&i, &i, &b, &guide, &prm).unwrap();
        prop_assert!(at_input.data == 0.0);
        prop_assert!(at_input.edge == 0.0);
        prop_assert!((at_input.total - prm.lambda_f * at_input.flatten).abs() < 1e-15);
    }
}
