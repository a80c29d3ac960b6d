// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::numeric::{log_sum_exp, softmax};

use super::network::Network;

/// Parameter gradients, shaped like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            weights: net
                .layers()
                .iter()
                .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            biases: net.layers().iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    /// Cross-entropy of the softmax over the final layer output.
    pub loss: f64,
    pub grads: Gradients,
    pub input_grad: Vec<f64>,
}

/// Cross-entropy loss and its gradient with respect to every parameter and the input.
pub fn loss_and_grad(net: &Network, x: &[f64], label: usize) -> Result<LossGrad> {
    let classes = net.output_dim();
    if label >= classes {
        return Err(Error::LabelOutOfRange {
            label,
            num_classes: classes,
        });
    }
    let (trace, pre) = net.forward_detailed(x)?;
    let logits = trace.logits();
    let loss = log_sum_exp(logits) - logits[label];

    // dL/d(output) for softmax cross-entropy.
    let mut upstream = softmax(logits);
    upstream[label] -= 1.0;

    let mut grads = Gradients::zeros_like(net);
    for (i, layer) in net.layers().iter().enumerate().rev() {
        let dz: Vec<f64> = upstream
            .iter()
            .zip(&pre[i])
            .map(|(g, &z)| g * layer.activation.derivative(z))
            .collect();
        let input = &trace.per_layer[i];
        let gw = &mut grads.weights[i];
        for (r, &d) in dz.iter().enumerate() {
            for (w, &a) in gw.row_mut(r).iter_mut().zip(input) {
                *w = d * a;
            }
        }
        grads.biases[i].copy_from_slice(&dz);
        upstream = layer.weights.matvec_transposed(&dz);
    }

    if !loss.is_finite() || upstream.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericOverflow("loss or gradient is not finite".into()));
    }
    Ok(LossGrad {
        loss,
        grads,
        input_grad: upstream,
    })
}
