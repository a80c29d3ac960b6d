// SPDX-License-Identifier: MIT OR Apache-2.0

//! # facade-core
//!
//! Unsupervised mechanistic anomaly detection for small feedforward networks.
//!
//! The pipeline, in order:
//!
//! 1. [`pseudoclass`]: DP-means clustering of a layer's activations at a
//!    density threshold `lambda`, giving *pseudoclasses*.
//! 2. [`circuitdisc`]: a grouped computational graph over the network and a
//!    greedy mean-ablation sweep that keeps only edges the output depends on.
//! 3. [`manifold`]: radius, participation-ratio dimension and a capacity
//!    proxy for every pseudoclass.
//! 4. [`facade`]: per-edge scores from how single-edge ablations change
//!    pseudoclass geometry, a softmax distribution over those edges, and a
//!    thresholded mixture-likelihood detector with edge attribution.
//!
//! [`netcore`] supplies the network substrate, [`synthdata`] seeded datasets
//! and [`attacks`] FGSM/PGD inputs to test the detector against.

pub mod attacks;
pub mod circuitdisc;
pub mod error;
pub mod facade;
pub mod manifold;
pub mod matrix;
pub mod metrics;
pub mod netcore;
pub mod numeric;
pub mod pseudoclass;
pub mod synthdata;

pub use error::{Error, Result};
pub use matrix::Matrix;
