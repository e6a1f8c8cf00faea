//! Central finite-difference oracle for the layer kernels.
//!
//! Each check draws a random layer shape, projects the layer output onto a
//! fixed random tensor to get a scalar loss, and compares the analytic
//! backward pass against `(L(x+ε) − L(x−ε)) / 2ε` for every input and
//! parameter coordinate. Only forward functions feed the numeric side.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stallwatch_core::tensor::{
    conv2d, conv2d_backward, linear, linear_backward, maxpool2d, maxpool2d_backward, relu,
    relu_backward, softmax_cross_entropy, LayerParams, Tensor,
};

pub const EPS: f64 = 1e-3;
pub const MAX_REL_ERR: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Largest relative error of `analytic` against the finite differences of
/// `loss` taken around `point`.
fn compare(
    point: &Tensor<f64>,
    analytic: &Tensor<f64>,
    mut loss: impl FnMut(&Tensor<f64>) -> f64,
    skip: impl Fn(usize) -> bool,
) -> f64 {
    assert_eq!(point.shape(), analytic.shape());
    let mut worst: f64 = 0.0;
    let mut probe = point.clone();
    for i in 0..point.len() {
        if skip(i) {
            continue;
        }
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + EPS;
        let up = loss(&probe);
        probe.data_mut()[i] = orig - EPS;
        let down = loss(&probe);
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * EPS);
        worst = worst.max(rel_err(analytic.data()[i], numeric));
    }
    worst
}

pub fn check_conv(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.random_range(1..=2);
    let c = rng.random_range(1..=3);
    let k = rng.random_range(1..=3);
    let kh = rng.random_range(1..=3);
    let kw = rng.random_range(1..=3);
    let stride = rng.random_range(1..=2);
    let pad = rng.random_range(0..=1);
    let h = rng.random_range(kh..=kh + 4);
    let w = rng.random_range(kw..=kw + 4);
    conv_case(rng, [n, c, h, w], [k, c, kh, kw], stride, pad)
}

pub fn conv_case(
    rng: &mut ChaCha8Rng,
    input_shape: [usize; 4],
    kernel_shape: [usize; 4],
    stride: usize,
    pad: usize,
) -> f64 {
    let x = random_tensor(rng, &input_shape);
    let mut params = LayerParams::new(
        random_tensor(rng, &kernel_shape),
        random_tensor(rng, &[kernel_shape[0]]),
    );
    let out = conv2d(&x, &params, stride, pad).unwrap();
    let proj = random_tensor(rng, out.shape());
    let grad_in = conv2d_backward(&x, &mut params, &proj, stride, pad, true).unwrap();

    let p0 = params.clone();
    let e_in = compare(
        &x,
        &grad_in,
        |xi| dot(&conv2d(xi, &p0, stride, pad).unwrap(), &proj),
        |_| false,
    );
    let e_w = compare(
        &p0.weights,
        &params.grad_weights,
        |wi| {
            let mut p = p0.clone();
            p.weights = wi.clone();
            dot(&conv2d(&x, &p, stride, pad).unwrap(), &proj)
        },
        |_| false,
    );
    let e_b = compare(
        &p0.bias,
        &params.grad_bias,
        |bi| {
            let mut p = p0.clone();
            p.bias = bi.clone();
            dot(&conv2d(&x, &p, stride, pad).unwrap(), &proj)
        },
        |_| false,
    );
    e_in.max(e_w).max(e_b)
}

pub fn check_maxpool(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.random_range(1..=2);
    let c = rng.random_range(1..=3);
    let window = rng.random_range(1..=3);
    let stride = rng.random_range(1..=3);
    let h = rng.random_range(window..=window + 4);
    let w = rng.random_range(window..=window + 4);
    // distinct values spaced well beyond ε so the argmax is stable under probing
    let len = n * c * h * w;
    let mut values: Vec<f64> = (0..len).map(|i| i as f64 * 0.05).collect();
    for i in (1..len).rev() {
        let j = rng.random_range(0..=i);
        values.swap(i, j);
    }
    let x = Tensor::from_vec(&[n, c, h, w], values).unwrap();
    let (out, index) = maxpool2d(&x, window, stride).unwrap();
    let proj = random_tensor(rng, out.shape());
    let grad_in = maxpool2d_backward(&index, &proj, x.shape()).unwrap();
    compare(
        &x,
        &grad_in,
        |xi| dot(&maxpool2d(xi, window, stride).unwrap().0, &proj),
        |_| false,
    )
}

pub fn check_relu(rng: &mut ChaCha8Rng) -> f64 {
    let len = rng.random_range(1..=40);
    let x = random_tensor(rng, &[len]);
    let proj = random_tensor(rng, &[len]);
    let grad_in = relu_backward(&x, &proj).unwrap();
    let xs = x.clone();
    compare(
        &x,
        &grad_in,
        |xi| dot(&relu(xi), &proj),
        |i| xs.data()[i].abs() < 1e-2,
    )
}

pub fn check_linear(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.random_range(1..=4);
    let d = rng.random_range(1..=8);
    let m = rng.random_range(1..=6);
    let x = random_tensor(rng, &[n, d]);
    let mut params = LayerParams::new(random_tensor(rng, &[d, m]), random_tensor(rng, &[m]));
    let out = linear(&x, &params).unwrap();
    let proj = random_tensor(rng, out.shape());
    let grad_in = linear_backward(&x, &mut params, &proj).unwrap();
    let p0 = params.clone();
    let e_in = compare(
        &x,
        &grad_in,
        |xi| dot(&linear(xi, &p0).unwrap(), &proj),
        |_| false,
    );
    let e_w = compare(
        &p0.weights,
        &params.grad_weights,
        |wi| {
            let mut p = p0.clone();
            p.weights = wi.clone();
            dot(&linear(&x, &p).unwrap(), &proj)
        },
        |_| false,
    );
    let e_b = compare(
        &p0.bias,
        &params.grad_bias,
        |bi| {
            let mut p = p0.clone();
            p.bias = bi.clone();
            dot(&linear(&x, &p).unwrap(), &proj)
        },
        |_| false,
    );
    e_in.max(e_w).max(e_b)
}

pub fn check_softmax_ce(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.random_range(1..=8);
    let logits = Tensor::from_vec(
        &[n, 2],
        (0..2 * n).map(|_| rng.random_range(-4.0..4.0)).collect(),
    )
    .unwrap();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let ce = softmax_cross_entropy(&logits, &labels).unwrap();
    compare(
        &logits,
        &ce.grad_logits,
        |z| softmax_cross_entropy(z, &labels).unwrap().loss,
        |_| false,
    )
}
