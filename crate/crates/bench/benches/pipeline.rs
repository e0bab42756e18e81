//! Criterion benchmarks for the hot paths: energy evaluation with
//! gradient, convolution forward, and the IRLS/CG solve.

use criterion::{criterion_group, criterion_main, Criterion};

use smoothlab_core::energy::{ContextOptions, EnergyContext, EnergyParams};
use smoothlab_core::guidance::{self, BinaryMask, Neighborhood};
use smoothlab_core::net::{build, PresetKind, Tensor};
use smoothlab_core::solvers::{solve_irls, IrlsConfig, PMode};
use smoothlab_core::{Image, Rng};

fn random_image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = Rng::new(seed);
    let data = (0..h * w * 3).map(|_| rng.next_f64()).collect();
    Image::new(h, w, 3, data).unwrap()
}

fn bench_energy(c: &mut Criterion) {
    let img = random_image(64, 64, 1);
    let guide = guidance::edge_response(&img, Neighborhood::Four);
    let edges = BinaryMask::full(64, 64);
    let params = EnergyParams {
        h: 9,
        ..EnergyParams::default()
    };
    let ctx = EnergyContext::new(&img, &guide, &edges, params, ContextOptions::new()).unwrap();
    let pmap = ctx.select_p(&img);
    c.bench_function("energy_eval_with_grad_64", |b| {
        b.iter(|| ctx.eval_with_grad(&img, &pmap).unwrap())
    });
}

fn bench_conv(c: &mut Criterion) {
    let mut net = build(PresetKind::Toy8, 1);
    let img = random_image(64, 64, 2);
    let x = Tensor::from_image(&img);
    c.bench_function("toy8_forward_64", |b| {
        b.iter(|| net.forward(&x, false).unwrap())
    });
}

fn bench_irls(c: &mut Criterion) {
    let img = random_image(32, 32, 3);
    let guide = guidance::edge_response(&img, Neighborhood::Four);
    let edges = BinaryMask::empty(32, 32);
    let params = EnergyParams {
        h: 5,
        ..EnergyParams::default()
    };
    let ctx = EnergyContext::new(&img, &guide, &edges, params, ContextOptions::new()).unwrap();
    let config = IrlsConfig {
        outer_iterations: 2,
        p_mode: PMode::AllSmall,
        ..IrlsConfig::default()
    };
    c.bench_function("irls_2_outer_32", |b| {
        b.iter(|| solve_irls(&ctx, &config).unwrap())
    });
}

criterion_group!(benches, bench_energy, bench_conv, bench_irls);
criterion_main!(benches);
