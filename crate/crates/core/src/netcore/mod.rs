// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fully connected feedforward networks: forward passes with activation
//! capture, backpropagation, SGD training and JSON model files.
//!
//! The final layer's output is treated as a logit vector; softmax is applied
//! by loss and metric code rather than stored as a layer.

mod backprop;
mod dataset;
mod network;
mod train;

pub use backprop::{loss_and_grad, Gradients, LossGrad};
pub use dataset::Dataset;
pub use network::{load_model, save_model, Activation, ActivationTrace, Layer, Network};
pub use train::{accuracy, train_sgd, TrainConfig, TrainReport};
