// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative with respect to the pre-activation. The relu kink at 0 uses 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One dense layer: `activation(W x + b)` with `W` of shape out×in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub activation: Activation,
    pub bias: Vec<f64>,
    pub weights: Matrix,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        let layer = Self {
            activation,
            bias,
            weights,
        };
        layer.validate()?;
        Ok(layer)
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    fn validate(&self) -> Result<()> {
        if self.out_dim() == 0 || self.in_dim() == 0 {
            return Err(Error::Validation("layer dimensions must be positive".into()));
        }
        if self.bias.len() != self.out_dim() {
            return Err(Error::Validation(format!(
                "bias has length {}, weights have {} rows",
                self.bias.len(),
                self.out_dim()
            )));
        }
        if !self.weights.as_slice().iter().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(Error::Validation("layer contains non-finite parameters".into()));
        }
        Ok(())
    }

    /// `W x + b`.
    pub fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.weights.matvec(x);
        for (zi, bi) in z.iter_mut().zip(&self.bias) {
            *zi += bi;
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNetwork")]
pub struct Network {
    input_dim: usize,
    layers: Vec<Layer>,
}

#[derive(Deserialize)]
struct RawNetwork {
    input_dim: usize,
    layers: Vec<Layer>,
}

impl TryFrom<RawNetwork> for Network {
    type Error = Error;

    fn try_from(raw: RawNetwork) -> Result<Self> {
        Network::new(raw.input_dim, raw.layers)
    }
}

impl Network {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Validation("input_dim must be positive".into()));
        }
        if layers.is_empty() {
            return Err(Error::Validation("network needs at least one layer".into()));
        }
        let mut width = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            layer.validate()?;
            if layer.in_dim() != width {
                return Err(Error::Validation(format!(
                    "layer {i} expects {} inputs but the previous width is {width}",
                    layer.in_dim()
                )));
            }
            width = layer.out_dim();
        }
        Ok(Self { input_dim, layers })
    }

    /// Seeded uniform Glorot (He for relu) initialisation with zero biases.
    pub fn random(input_dim: usize, shape: &[(usize, Activation)], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fan_in = input_dim;
        let mut layers = Vec::with_capacity(shape.len());
        for &(width, activation) in shape {
            let limit = match activation {
                Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                _ => (6.0 / (fan_in + width) as f64).sqrt(),
            };
            let weights = Matrix::from_fn(width, fan_in, |_, _| rng.random_range(-limit..limit));
            layers.push(Layer::new(weights, vec![0.0; width], activation)?);
            fan_in = width;
        }
        Network::new(input_dim, layers)
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, Layer::out_dim)
    }

    #[inline]
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    #[inline]
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Widths of every activation vector in a trace: input first, logits last.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<()> {
        check_dim("network input", self.input_dim, x.len())?;
        check_finite("network input", x)
    }

    pub fn forward(&self, x: &[f64]) -> Result<ActivationTrace> {
        Ok(self.forward_detailed(x)?.0)
    }

    /// Forward pass returning the trace and each layer's pre-activation vector.
    pub fn forward_detailed(&self, x: &[f64]) -> Result<(ActivationTrace, Vec<Vec<f64>>)> {
        self.check_input(x)?;
        let mut per_layer = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        per_layer.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.pre_activation(&per_layer[i]);
            let a: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericOverflow(format!("layer {i} produced a non-finite activation")));
            }
            pre.push(z);
            per_layer.push(a);
        }
        Ok((
            ActivationTrace {
                sample_id: 0,
                per_layer,
            },
            pre,
        ))
    }

    /// Row-wise [`Network::forward`]; each trace's `sample_id` is its row index.
    pub fn forward_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<ActivationTrace>> {
        rows.iter()
            .enumerate()
            .map(|(i, x)| {
                let mut trace = self.forward(x)?;
                trace.sample_id = i;
                Ok(trace)
            })
            .collect()
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.per_layer.pop().unwrap_or_default())
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let logits = self.logits(x)?;
        Ok(argmax(&logits))
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Activations captured during one forward pass.
///
/// `per_layer[0]` is the input, `per_layer[i]` the post-activation output of
/// layer `i - 1`. The last entry is the logit vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationTrace {
    pub sample_id: usize,
    pub per_layer: Vec<Vec<f64>>,
}

impl ActivationTrace {
    pub fn input(&self) -> &[f64] {
        &self.per_layer[0]
    }

    pub fn logits(&self) -> &[f64] {
        self.per_layer.last().map_or(&[], Vec::as_slice)
    }

    pub fn layer(&self, index: usize) -> Option<&[f64]> {
        self.per_layer.get(index).map(Vec::as_slice)
    }
}

pub fn save_model(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(net).map_err(Error::from_json)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Network> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(Error::from_json)
}
