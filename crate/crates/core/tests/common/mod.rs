// SPDX-License-Identifier: MIT OR Apache-2.0
#![allow(dead_code)]

use facade_core::netcore::{loss_and_grad, Activation, Layer, Network};
use facade_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded network with random weights *and* biases, up to 3 layers.
pub fn random_net(seed: u64, input_dim: usize, widths: &[usize], hidden: Activation) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fan_in = input_dim;
    let mut layers = Vec::new();
    for (i, &w) in widths.iter().enumerate() {
        let act = if i + 1 == widths.len() { Activation::Identity } else { hidden };
        let weights = Matrix::from_fn(w, fan_in, |_, _| rng.random_range(-1.0..1.0));
        let bias = (0..w).map(|_| rng.random_range(-0.5..0.5)).collect();
        layers.push(Layer::new(weights, bias, act).unwrap());
        fan_in = w;
    }
    Network::new(input_dim, layers).unwrap()
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Replace one parameter and rebuild the network.
pub fn with_param(net: &Network, layer: usize, weight: Option<(usize, usize)>, bias: Option<usize>, value: f64) -> Network {
    let mut layers = net.layers().to_vec();
    if let Some((r, c)) = weight {
        layers[layer].weights.set(r, c, value);
    }
    if let Some(r) = bias {
        layers[layer].bias[r] = value;
    }
    Network::new(net.input_dim(), layers).unwrap()
}

/// Cross-entropy as `ln Σ_j exp(z_j − z_label)`, using `ln_1p` when the
/// label is the argmax so saturated nets keep full relative precision.
pub fn loss(net: &Network, x: &[f64], label: usize) -> f64 {
    let z = net.logits(x).unwrap();
    let d: Vec<f64> = z.iter().map(|v| v - z[label]).collect();
    let m = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m <= 0.0 {
        d.iter().enumerate().filter(|(j, _)| *j != label).map(|(_, v)| v.exp()).sum::<f64>().ln_1p()
    } else {
        m + d.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
    }
}

/// Largest relative error between backprop and central finite differences
/// (step `h`) over every weight, bias and input coordinate.
pub fn max_gradient_error(net: &Network, x: &[f64], label: usize, h: f64) -> f64 {
    let analytic = loss_and_grad(net, x, label).unwrap();
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
    let mut worst: f64 = 0.0;
    for (li, layer) in net.layers().iter().enumerate() {
        for r in 0..layer.out_dim() {
            for c in 0..layer.in_dim() {
                let w = layer.weights.get(r, c);
                let up = loss(&with_param(net, li, Some((r, c)), None, w + h), x, label);
                let down = loss(&with_param(net, li, Some((r, c)), None, w - h), x, label);
                worst = worst.max(rel(analytic.grads.weights[li].get(r, c), (up - down) / (2.0 * h)));
            }
            let b = layer.bias[r];
            let up = loss(&with_param(net, li, None, Some(r), b + h), x, label);
            let down = loss(&with_param(net, li, None, Some(r), b - h), x, label);
            worst = worst.max(rel(analytic.grads.biases[li][r], (up - down) / (2.0 * h)));
        }
    }
    for i in 0..x.len() {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        let fd = (loss(net, &xp, label) - loss(net, &xm, label)) / (2.0 * h);
        worst = worst.max(rel(analytic.input_grad[i], fd));
    }
    worst
}

/// Reference forward pass written out with plain loops over `to_rows()`.
pub fn reference_forward(net: &Network, x: &[f64]) -> Vec<Vec<f64>> {
    let mut out = vec![x.to_vec()];
    for layer in net.layers() {
        let rows = layer.weights.to_rows();
        let prev = out.last().unwrap().clone();
        let mut next = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            let mut acc = layer.bias[r];
            for c in 0..row.len() {
                acc += row[c] * prev[c];
            }
            next.push(match layer.activation {
                Activation::Relu => {
                    if acc > 0.0 {
                        acc
                    } else {
                        0.0
                    }
                }
                Activation::Tanh => acc.tanh(),
                Activation::Identity => acc,
            });
        }
        out.push(next);
    }
    out
}
