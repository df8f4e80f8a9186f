#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use vgrow::rng::VRng;
use vgrow::{Activation, InputNorm, Mlp};

const ACTIVATIONS: [Activation; 3] = [Activation::Relu, Activation::Tanh, Activation::Identity];

/// Tiny net with random shape, activations, parameters and (sometimes) an
/// input standardization.
pub fn random_net(rng: &mut VRng) -> Mlp {
    let depth = rng.random_range(1..=3);
    let mut sizes = vec![rng.random_range(1..=4)];
    for _ in 1..depth {
        sizes.push(rng.random_range(1..=5));
    }
    sizes.push(rng.random_range(1..=3));
    let activations: Vec<Activation> = (0..depth)
        .map(|_| ACTIVATIONS[rng.random_range(0..3)])
        .collect();
    let n = vgrow::net::param_count(&sizes);
    let params: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut net = Mlp::from_parts(&sizes, activations, params).unwrap();
    if rng.random_bool(0.5) {
        let d = sizes[0];
        net.set_input_norm(Some(InputNorm {
            shift: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            scale: (0..d).map(|_| rng.random_range(0.5..2.0)).collect(),
        }))
        .unwrap();
    }
    net
}

pub fn random_matrix(rng: &mut VRng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.5..1.5))
}

/// `sum(upstream * net(x))`, the scalar whose gradients are checked.
pub fn contracted(net: &Mlp, x: &Array2<f64>, upstream: &Array2<f64>) -> f64 {
    (net.forward(&x.view()).unwrap() * upstream).sum()
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-8);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Worst relative error (max-norm) of `grad_params` and `grad_input` against
/// central differences, for one random net.
pub fn gradient_errors(rng: &mut VRng) -> (f64, f64) {
    let net = random_net(rng);
    let rows = rng.random_range(1..=4);
    let x = random_matrix(rng, rows, net.input_dim());
    let upstream = random_matrix(rng, rows, net.output_dim());
    let h = 1e-6;

    let gp = net.grad_params(&x.view(), &upstream.view()).unwrap();
    let fd_p: Vec<f64> = (0..net.num_params())
        .map(|i| {
            let mut plus = net.clone();
            let mut minus = net.clone();
            let mut p = net.params().to_vec();
            p[i] += h;
            plus.set_params(p.clone()).unwrap();
            p[i] -= 2.0 * h;
            minus.set_params(p).unwrap();
            (contracted(&plus, &x, &upstream) - contracted(&minus, &x, &upstream)) / (2.0 * h)
        })
        .collect();

    let gi = net.grad_input(&x.view(), &upstream.view()).unwrap();
    let mut fd_i = Vec::with_capacity(x.len());
    for r in 0..x.nrows() {
        for c in 0..x.ncols() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[[r, c]] += h;
            xm[[r, c]] -= h;
            fd_i.push(
                (contracted(&net, &xp, &upstream) - contracted(&net, &xm, &upstream)) / (2.0 * h),
            );
        }
    }
    (rel_err(&gp, &fd_p), rel_err(gi.as_slice().unwrap(), &fd_i))
}
