// SPDX-License-Identifier: MIT OR Apache-2.0

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

use super::backprop::{loss_and_grad, Gradients};
use super::dataset::Dataset;
use super::network::Network;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub network: Network,
    /// Mean per-sample loss of each epoch, measured before each batch's update.
    pub epoch_losses: Vec<f64>,
}

/// Plain minibatch SGD with seeded shuffling. Single-threaded and fully
/// deterministic for a given seed.
pub fn train_sgd(net: &Network, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::invalid("learning rate must be positive and finite"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    if data.is_empty() {
        return Err(Error::invalid("training data is empty"));
    }
    check_dim("training data width", net.input_dim(), data.dim())?;
    if data.num_classes() > net.output_dim() {
        return Err(Error::LabelOutOfRange {
            label: data.num_classes() - 1,
            num_classes: net.output_dim(),
        });
    }

    let mut net = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = Gradients::zeros_like(&net);
            for &i in batch {
                let lg = match loss_and_grad(&net, &data.inputs()[i], data.labels()[i]) {
                    Ok(lg) => lg,
                    Err(Error::NumericOverflow(_)) => return Err(Error::TrainingDiverged { epoch }),
                    Err(e) => return Err(e),
                };
                total += lg.loss;
                acc.accumulate(&lg.grads);
            }
            let step = cfg.lr / batch.len() as f64;
            for (layer, (gw, gb)) in net.layers_mut().iter_mut().zip(acc.weights.iter().zip(&acc.biases)) {
                for (w, g) in layer.weights.as_mut_slice().iter_mut().zip(gw.as_slice()) {
                    *w -= step * g;
                }
                for (b, g) in layer.bias.iter_mut().zip(gb) {
                    *b -= step * g;
                }
            }
        }
        let mean_loss = total / data.len() as f64;
        let params_finite = net
            .layers()
            .iter()
            .all(|l| l.weights.as_slice().iter().chain(&l.bias).all(|v| v.is_finite()));
        if !mean_loss.is_finite() || !params_finite {
            return Err(Error::TrainingDiverged { epoch });
        }
        epoch_losses.push(mean_loss);
    }

    Ok(TrainReport {
        network: net,
        epoch_losses,
    })
}

/// Fraction of rows whose argmax logit equals the label.
pub fn accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    let mut correct = 0usize;
    for (x, &y) in data.inputs().iter().zip(data.labels()) {
        if net.predict(x)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::Activation;

    fn toy() -> Dataset {
        Dataset::new(
            "toy",
            0,
            vec![vec![-1.0, 0.0], vec![1.0, 0.0], vec![-2.0, 0.5], vec![2.0, -0.5]],
            vec![0, 1, 0, 1],
        )
        .unwrap()
    }

    #[test]
    fn zero_epochs_is_identity() {
        let net = Network::random(2, &[(4, Activation::Tanh), (2, Activation::Identity)], 3).unwrap();
        let cfg = TrainConfig { lr: 0.1, epochs: 0, batch_size: 2, seed: 1 };
        let out = train_sgd(&net, &toy(), &cfg).unwrap();
        assert_eq!(out.network, net);
        assert!(out.epoch_losses.is_empty());
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let net = Network::random(2, &[(4, Activation::Identity), (2, Activation::Identity)], 3).unwrap();
        let cfg = TrainConfig { lr: 1e200, epochs: 10, batch_size: 1, seed: 1 };
        assert!(matches!(train_sgd(&net, &toy(), &cfg), Err(Error::TrainingDiverged { .. })));
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let net = Network::random(2, &[(2, Activation::Identity)], 3).unwrap();
        let cfg = TrainConfig { lr: 0.0, epochs: 1, batch_size: 1, seed: 1 };
        assert!(train_sgd(&net, &toy(), &cfg).is_err());
    }
}
