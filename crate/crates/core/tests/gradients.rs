//! Reverse-mode parameter gradients checked against central differences.

use napinn::neural::{forward_batch_with_rates, he_init, loss_gradient, Batch, NetworkParams, NetworkSpec};

fn net(seed: u64) -> NetworkParams {
    let spec = NetworkSpec::new(3, 5, 2);
    let mut p = he_init(&spec, seed).unwrap();
    for layer in spec.layers() {
        for (i, b) in p.values[layer.bias..layer.bias + layer.fan_out].iter_mut().enumerate() {
            *b = 0.13 * i as f64 - 0.31;
        }
    }
    p
}

const TIMES: [f64; 4] = [-0.7, -0.15, 0.4, 0.95];

/// Mixes values, rates and a product of both so every adjoint path is used.
fn scalar_loss(out: &Batch) -> (f64, Batch) {
    let mut adj = Batch::zeros(out.values.rows(), out.values.cols());
    let mut loss = 0.0;
    for r in 0..out.values.rows() {
        let (u0, u1) = (out.values.get(r, 0), out.values.get(r, 1));
        let (d0, d1) = (out.rates.get(r, 0), out.rates.get(r, 1));
        // L = u0² + 3 d1² + u1 d0 + 0.5 d0
        loss += u0 * u0 + 3.0 * d1 * d1 + u1 * d0 + 0.5 * d0;
        adj.values.set(r, 0, 2.0 * u0);
        adj.values.set(r, 1, d0);
        adj.rates.set(r, 0, u1 + 0.5);
        adj.rates.set(r, 1, 6.0 * d1);
    }
    (loss, adj)
}

fn loss_only(p: &NetworkParams) -> f64 {
    scalar_loss(&forward_batch_with_rates(p, &TIMES)).0
}

fn check(seed: u64) {
    let p = net(seed);
    let (loss, grads) = loss_gradient(std::slice::from_ref(&p), &TIMES, |outs| {
        let (l, a) = scalar_loss(&outs[0]);
        Ok((l, vec![a]))
    })
    .unwrap();
    assert!((loss - loss_only(&p)).abs() <= 1e-12 * loss.abs().max(1.0));
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let mut up = p.clone();
        up.values[i] += h;
        let mut down = p.clone();
        down.values[i] -= h;
        let fd = (loss_only(&up) - loss_only(&down)) / (2.0 * h);
        let err = (grads[0][i] - fd).abs() / fd.abs().max(1e-2);
        worst = worst.max(err);
        assert!(err < 1e-4, "seed {seed} param {i}: analytic {} fd {fd}", grads[0][i]);
    }
    assert!(worst.is_finite());
}

#[test]
fn gradient_of_value_and_rate_loss_matches_central_differences() {
    for seed in [1, 2, 3] {
        check(seed);
    }
}

#[test]
fn rate_only_loss_matches_central_differences() {
    let p = net(11);
    let f = |b: &Batch| -> f64 { b.rates.as_slice().iter().map(|d| d * d).sum() };
    let (_, grads) = loss_gradient(std::slice::from_ref(&p), &TIMES, |outs| {
        let mut adj = Batch::zeros(TIMES.len(), 2);
        for (a, &d) in adj.rates.as_mut_slice().iter_mut().zip(outs[0].rates.as_slice()) {
            *a = 2.0 * d;
        }
        Ok((f(&outs[0]), vec![adj]))
    })
    .unwrap();
    let h = 1e-6;
    for i in 0..p.len() {
        let mut up = p.clone();
        up.values[i] += h;
        let mut down = p.clone();
        down.values[i] -= h;
        let fd = (f(&forward_batch_with_rates(&up, &TIMES)) - f(&forward_batch_with_rates(&down, &TIMES))) / (2.0 * h);
        assert!(
            (grads[0][i] - fd).abs() / fd.abs().max(1e-2) < 1e-4,
            "param {i}: {} vs {fd}",
            grads[0][i]
        );
    }
}
