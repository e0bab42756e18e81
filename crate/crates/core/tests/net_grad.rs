//! Finite-difference validation of the hand-rolled network gradients.

use smoothlab_core::net::{build, PresetKind, Tensor};
use smoothlab_core::{Network, Rng};

/// Loss <forward(x), g> with a fixed co-vector g; returns the scalar.
fn loss(net: &mut Network, x: &Tensor, g: &[f64]) -> f64 {
    let y = net.forward(x, true).unwrap();
    y.data().iter().zip(g).map(|(a, b)| a * b).sum()
}

/// Moves every parameter off its initialization (the final conv starts
/// at zero, which would block gradient flow to earlier layers).
fn jitter(net: &mut Network, seed: u64) {
    let mut rng = Rng::new(seed);
    for p in net.params_mut() {
        for v in p.value.iter_mut() {
            *v += 0.1 * (rng.next_f64() - 0.5);
        }
    }
}

#[test]
fn toy8_backprop_matches_finite_differences() {
    let mut net = build(PresetKind::Toy8, 11);
    jitter(&mut net, 12);

    let mut rng = Rng::new(13);
    let x = Tensor::from_vec(
        1,
        3,
        8,
        8,
        (0..3 * 64).map(|_| rng.next_f64()).collect(),
    )
    .unwrap();
    let y = net.forward(&x, true).unwrap();
    let g: Vec<f64> = (0..y.data().len())
        .map(|_| rng.next_f64() - 0.5)
        .collect();

    // Analytic gradients.
    net.zero_grad();
    net.forward(&x, true).unwrap();
    net.backward(&Tensor::from_vec(1, y.channels(), y.height(), y.width(), g.clone()).unwrap())
        .unwrap();
    let analytic: Vec<Vec<f64>> = net
        .params_mut()
        .iter()
        .map(|p| p.grad.clone())
        .collect();
    let nparams = analytic.len();

    // Sample >= 60 coordinates spread across every parameter tensor.
    let mut picks = Vec::new();
    for pi in 0..nparams {
        let len = analytic[pi].len();
        for _ in 0..2 {
            picks.push((pi, rng.next_below(len)));
        }
    }
    while picks.len() < 60 {
        let pi = rng.next_below(nparams);
        picks.push((pi, rng.next_below(analytic[pi].len())));
    }

    let step = 1e-5;
    for &(pi, k) in &picks {
        let orig = {
            let mut ps = net.params_mut();
            let orig = ps[pi].value[k];
            ps[pi].value[k] = orig + step;
            orig
        };
        let up = loss(&mut net, &x, &g);
        {
            let mut ps = net.params_mut();
            ps[pi].value[k] = orig - step;
        }
        let dn = loss(&mut net, &x, &g);
        {
            let mut ps = net.params_mut();
            ps[pi].value[k] = orig;
        }
        let fd = (up - dn) / (2.0 * step);
        let an = analytic[pi][k];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-5);
        assert!(
            rel < 1e-3,
            "param {pi}[{k}]: fd {fd} vs analytic {an} (rel {rel})"
        );
    }
}

#[test]
fn input_gradient_matches_finite_differences() {
    let mut net = build(PresetKind::Toy8, 21);
    jitter(&mut net, 22);

    let mut rng = Rng::new(23);
    let mut xdata: Vec<f64> = (0..3 * 36).map(|_| rng.next_f64()).collect();
    let x = Tensor::from_vec(1, 3, 6, 6, xdata.clone()).unwrap();
    let y = net.forward(&x, true).unwrap();
    let g: Vec<f64> = (0..y.data().len())
        .map(|_| rng.next_f64() - 0.5)
        .collect();

    net.zero_grad();
    net.forward(&x, true).unwrap();
    let dx = net
        .backward(&Tensor::from_vec(1, y.channels(), y.height(), y.width(), g.clone()).unwrap())
        .unwrap();

    let step = 1e-5;
    for k in (0..xdata.len()).step_by(7) {
        let orig = xdata[k];
        xdata[k] = orig + step;
        let up = loss(
            &mut net,
            &Tensor::from_vec(1, 3, 6, 6, xdata.clone()).unwrap(),
            &g,
        );
        xdata[k] = orig - step;
        let dn = loss(
            &mut net,
            &Tensor::from_vec(1, 3, 6, 6, xdata.clone()).unwrap(),
            &g,
        );
        xdata[k] = orig;
        let fd = (up - dn) / (2.0 * step);
        let an = dx.data()[k];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-5);
        assert!(rel < 1e-3, "input[{k}]: fd {fd} vs analytic {an}");
    }
}
