// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded synthetic classification datasets.
//!
//! Sample `i` always belongs to class `i % num_classes`, so class sizes differ
//! by at most one and any contiguous split stays balanced.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::squared_distance;
use crate::netcore::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenKind {
    GaussianBlobs,
    TwoMoons,
    GridGaussians,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub kind: GenKind,
    pub n: usize,
    pub dim: usize,
    pub num_classes: usize,
    /// Minimum distance between class centers in units of `noise_std`.
    /// Two moons have a fixed geometry and only validate this field.
    pub separation: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.n < self.num_classes {
            return Err(Error::invalid(format!(
                "need n >= num_classes >= 1 (n = {}, num_classes = {})",
                self.n, self.num_classes
            )));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dim must be positive"));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::invalid("separation must be positive"));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std must be positive"));
        }
        if self.kind == GenKind::TwoMoons && (self.num_classes != 2 || self.dim < 2) {
            return Err(Error::invalid("two_moons needs num_classes = 2 and dim >= 2"));
        }
        Ok(())
    }

    fn name(&self) -> String {
        let kind = match self.kind {
            GenKind::GaussianBlobs => "gaussian_blobs",
            GenKind::TwoMoons => "two_moons",
            GenKind::GridGaussians => "grid_gaussians",
        };
        format!("{kind}-n{}-d{}-k{}-s{}", self.n, self.dim, self.num_classes, self.seed)
    }
}

pub fn generate(spec: &GenSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels: Vec<usize> = (0..spec.n).map(|i| i % spec.num_classes).collect();
    let inputs = match spec.kind {
        GenKind::GaussianBlobs => {
            let centers = blob_centers(spec, &mut rng);
            around_centers(&centers, &labels, spec.noise_std, &mut rng)
        }
        GenKind::GridGaussians => {
            let centers = grid_centers(spec);
            around_centers(&centers, &labels, spec.noise_std, &mut rng)
        }
        GenKind::TwoMoons => two_moons(spec, &labels, &mut rng),
    };
    Dataset::new(spec.name(), spec.seed, inputs, labels)
}

/// Centers drawn from an isotropic Gaussian of per-coordinate scale
/// `separation * noise_std`, rejecting any draw closer than that to an
/// accepted center. The scale grows after repeated rejections so the loop
/// always terminates.
pub fn blob_centers(spec: &GenSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let min_dist = spec.separation * spec.noise_std;
    let min_sq = min_dist * min_dist;
    let mut scale = min_dist;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.num_classes);
    let mut rejections = 0;
    while centers.len() < spec.num_classes {
        let candidate: Vec<f64> = (0..spec.dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        if centers.iter().all(|c| squared_distance(c, &candidate) >= min_sq) {
            centers.push(candidate);
        } else {
            rejections += 1;
            if rejections % 64 == 0 {
                scale *= 1.5;
            }
        }
    }
    centers
}

/// Centers on a square lattice in the first two coordinates (one in 1-D),
/// spaced `separation * noise_std` apart.
fn grid_centers(spec: &GenSpec) -> Vec<Vec<f64>> {
    let spacing = spec.separation * spec.noise_std;
    let side = if spec.dim == 1 {
        spec.num_classes
    } else {
        (spec.num_classes as f64).sqrt().ceil() as usize
    };
    (0..spec.num_classes)
        .map(|c| {
            let mut center = vec![0.0; spec.dim];
            center[0] = spacing * (c % side) as f64;
            if spec.dim > 1 {
                center[1] = spacing * (c / side) as f64;
            }
            center
        })
        .collect()
}

fn around_centers(centers: &[Vec<f64>], labels: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let noise = Normal::new(0.0, std).expect("validated std");
    labels
        .iter()
        .map(|&c| centers[c].iter().map(|m| m + noise.sample(rng)).collect())
        .collect()
}

/// The classic interleaved half circles of radius 1. For `dim > 2` the 2-D
/// points are zero-padded and rotated by a seeded orthogonal matrix.
fn two_moons(spec: &GenSpec, labels: &[usize], rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let noise = Normal::new(0.0, spec.noise_std).expect("validated std");
    let planar: Vec<[f64; 2]> = labels
        .iter()
        .map(|&c| {
            let t = rng.random_range(0.0..std::f64::consts::PI);
            let (x, y) = if c == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            [x + noise.sample(rng), y + noise.sample(rng)]
        })
        .collect();
    if spec.dim == 2 {
        return planar.into_iter().map(|p| p.to_vec()).collect();
    }
    let rotation = random_orthogonal(spec.dim, rng);
    planar
        .into_iter()
        .map(|p| (0..spec.dim).map(|i| rotation[i][0] * p[0] + rotation[i][1] * p[1]).collect())
        .collect()
}

/// Gram-Schmidt on a Gaussian matrix; rows of the result are orthonormal.
fn random_orthogonal(dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= proj * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}
