// SPDX-License-Identifier: MIT OR Apache-2.0

//! Pseudoclass discovery: DP-means clustering of one layer's activations at a
//! density threshold `lambda`, and an isotropic Gaussian mixture score built
//! from the resulting clusters.
//!
//! DP-means is order-sensitive. Points are always scanned in index order, so
//! a run is fully determined by the input rows and the config.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::matrix::squared_distance;
use crate::netcore::ActivationTrace;
use crate::numeric::log_sum_exp;

/// Variance floor for the mixture score so zero-radius clusters stay finite.
pub const SIGMA_MIN_SQ: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    /// Squared-distance penalty for opening a cluster.
    pub lambda: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_standardize")]
    pub standardize: bool,
}

fn default_max_iters() -> usize {
    100
}
fn default_tol() -> f64 {
    1e-9
}
fn default_standardize() -> bool {
    true
}

impl ClusterConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            max_iters: default_max_iters(),
            tol: default_tol(),
            standardize: default_standardize(),
        }
    }

    pub fn raw(lambda: f64) -> Self {
        Self {
            standardize: false,
            ..Self::new(lambda)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || self.lambda.is_nan() {
            return Err(Error::invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid("tol must be non-negative"));
        }
        Ok(())
    }
}

/// Per-dimension affine map into clustering space: `(x - mean) / scale`.
/// Dimensions with zero spread are centered but left unscaled (`scale = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn fit(points: &[Vec<f64>]) -> Self {
        let n = points.len() as f64;
        let d = points[0].len();
        let mut mean = vec![0.0; d];
        for p in points {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for p in points {
            for ((s, v), m) in var.iter_mut().zip(p).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pseudoclass {
    pub id: usize,
    pub layer_index: usize,
    /// Mean of the members, in clustering space.
    pub centroid: Vec<f64>,
    pub member_ids: Vec<usize>,
    /// Root mean squared distance of the members to the centroid.
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub layer_index: usize,
    pub lambda: f64,
    pub clusters: Vec<Pseudoclass>,
    /// Sample id of each clustered row, in scan order.
    pub sample_ids: Vec<usize>,
    /// Cluster id of each row, parallel to `sample_ids`.
    pub assignment: Vec<usize>,
    pub objective: f64,
    /// Objective after every outer iteration.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub standardization: Option<Standardization>,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    pub fn dim(&self) -> usize {
        self.clusters[0].centroid.len()
    }

    pub fn cluster_of(&self, sample_id: usize) -> Option<usize> {
        self.sample_ids
            .iter()
            .position(|&s| s == sample_id)
            .map(|row| self.assignment[row])
    }

    /// Maps a raw activation vector into clustering space.
    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        match &self.standardization {
            Some(s) => s.apply(x),
            None => x.to_vec(),
        }
    }

    /// Recomputes `Σ min-assigned squared distance + λ·k` from `points`
    /// (raw, untransformed rows in `sample_ids` order).
    pub fn recompute_objective(&self, points: &[Vec<f64>]) -> f64 {
        let fit: f64 = points
            .iter()
            .zip(&self.assignment)
            .map(|(p, &c)| squared_distance(&self.transform(p), &self.clusters[c].centroid))
            .sum();
        fit + self.lambda * self.k() as f64
    }
}

/// DP-means over the rows of `points`, scanned in index order. Sample ids are
/// the row indices and the reported layer index is 0.
pub fn dp_means(points: &[Vec<f64>], cfg: &ClusterConfig) -> Result<Clustering> {
    let order: Vec<usize> = (0..points.len()).collect();
    dp_means_in_order(points, &order, cfg)
}

/// DP-means with an explicit scan order; `order` must be a permutation of the
/// row indices. Spawned clusters are numbered in the order they appear.
pub fn dp_means_in_order(points: &[Vec<f64>], order: &[usize], cfg: &ClusterConfig) -> Result<Clustering> {
    cfg.validate()?;
    if points.is_empty() {
        return Err(Error::invalid("cannot cluster zero points"));
    }
    let d = points[0].len();
    if d == 0 {
        return Err(Error::invalid("points must have positive dimension"));
    }
    for p in points {
        check_dim("clustered point", d, p.len())?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("clustered points must be finite"));
        }
    }

    let mut seen = vec![false; points.len()];
    if order.len() != points.len() || order.iter().any(|&i| i >= seen.len() || std::mem::replace(&mut seen[i], true)) {
        return Err(Error::invalid("scan order must be a permutation of the rows"));
    }

    let standardization = cfg.standardize.then(|| Standardization::fit(points));
    let space: Vec<Vec<f64>> = match &standardization {
        Some(s) => points.iter().map(|p| s.apply(p)).collect(),
        None => points.to_vec(),
    };

    let run = run_dp_means(&space, order, cfg);
    let clusters = run
        .centroids
        .iter()
        .enumerate()
        .map(|(id, centroid)| {
            let members: Vec<usize> = (0..space.len()).filter(|&i| run.assignment[i] == id).collect();
            let ss: f64 = members.iter().map(|&i| squared_distance(&space[i], centroid)).sum();
            Pseudoclass {
                id,
                layer_index: 0,
                centroid: centroid.clone(),
                radius: (ss / members.len() as f64).sqrt(),
                member_ids: members,
            }
        })
        .collect();

    Ok(Clustering {
        layer_index: 0,
        lambda: cfg.lambda,
        clusters,
        sample_ids: (0..points.len()).collect(),
        assignment: run.assignment,
        objective: *run.history.last().expect("at least one iteration"),
        objective_history: run.history,
        iterations: run.iterations,
        converged: run.converged,
        standardization,
    })
}

struct DpRun {
    centroids: Vec<Vec<f64>>,
    assignment: Vec<usize>,
    history: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, mu) in centroids.iter().enumerate() {
        let dist = squared_distance(x, mu);
        // Strict comparison keeps the lowest id on ties.
        if dist < best.1 {
            best = (c, dist);
        }
    }
    best
}

fn run_dp_means(space: &[Vec<f64>], order: &[usize], cfg: &ClusterConfig) -> DpRun {
    let n = space.len();
    let d = space[0].len();
    let lambda = cfg.lambda;

    let mut global = vec![0.0; d];
    for p in space {
        for (g, v) in global.iter_mut().zip(p) {
            *g += v;
        }
    }
    global.iter_mut().for_each(|g| *g /= n as f64);

    let mut centroids = vec![global];
    let mut assignment = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;

        let mut next = vec![0; n];
        for &i in order {
            let x = &space[i];
            let (c, dist) = nearest(&centroids, x);
            if dist > lambda {
                centroids.push(x.clone());
                next[i] = centroids.len() - 1;
            } else {
                next[i] = c;
            }
        }

        // Centroid update; empty clusters are dropped and ids compacted in order.
        let mut sums = vec![vec![0.0; d]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (x, &c) in space.iter().zip(&next) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(x) {
                *s += v;
            }
        }
        let mut remap = vec![usize::MAX; centroids.len()];
        let mut updated = Vec::new();
        for (c, (sum, count)) in sums.into_iter().zip(&counts).enumerate() {
            if *count > 0 {
                remap[c] = updated.len();
                updated.push(sum.into_iter().map(|s| s / *count as f64).collect::<Vec<f64>>());
            }
        }
        centroids = updated;
        for c in next.iter_mut() {
            *c = remap[*c];
        }

        let fit: f64 = space
            .iter()
            .zip(&next)
            .map(|(x, &c)| squared_distance(x, &centroids[c]))
            .sum();
        let objective = fit + lambda * centroids.len() as f64;
        let improvement = history.last().map_or(f64::INFINITY, |prev: &f64| prev - objective);
        history.push(objective);

        let unchanged = next == assignment;
        assignment = next;
        if unchanged || improvement < cfg.tol {
            converged = true;
            break;
        }
    }

    DpRun {
        centroids,
        assignment,
        history,
        iterations,
        converged,
    }
}

/// Stacks `per_layer[layer_index]` from every trace and runs [`dp_means`].
pub fn cluster_layer(traces: &[ActivationTrace], layer_index: usize, cfg: &ClusterConfig) -> Result<Clustering> {
    let points = stack_layer(traces, layer_index)?;
    let mut clustering = dp_means(&points, cfg)?;
    clustering.layer_index = layer_index;
    clustering.sample_ids = traces.iter().map(|t| t.sample_id).collect();
    for pc in &mut clustering.clusters {
        pc.layer_index = layer_index;
        for m in pc.member_ids.iter_mut() {
            *m = traces[*m].sample_id;
        }
    }
    Ok(clustering)
}

pub(crate) fn stack_layer(traces: &[ActivationTrace], layer_index: usize) -> Result<Vec<Vec<f64>>> {
    let first = traces.first().ok_or_else(|| Error::invalid("no traces supplied"))?;
    let width = first
        .layer(layer_index)
        .ok_or_else(|| Error::invalid(format!("layer index {layer_index} out of range")))?
        .len();
    traces
        .iter()
        .map(|t| {
            if t.per_layer.len() != first.per_layer.len() {
                return Err(Error::invalid("traces come from networks of different depth"));
            }
            let v = t.layer(layer_index).expect("depth checked");
            check_dim("trace layer width", width, v.len())?;
            Ok(v.to_vec())
        })
        .collect()
}

/// Negative log-likelihood of `x` (raw activation space) under the isotropic
/// Gaussian mixture induced by `clustering`: weights proportional to member
/// counts, per-cluster variance `max(radius² / d, SIGMA_MIN_SQ)`.
pub fn mixture_nll(clustering: &Clustering, x: &[f64]) -> Result<f64> {
    let d = clustering.dim();
    check_dim("mixture_nll input", d, x.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("mixture_nll input must be finite"));
    }
    let z = clustering.transform(x);
    let total: usize = clustering.clusters.iter().map(|c| c.member_ids.len()).sum();
    let log_terms: Vec<f64> = clustering
        .clusters
        .iter()
        .map(|c| {
            let weight = c.member_ids.len() as f64 / total as f64;
            let var = (c.radius * c.radius / d as f64).max(SIGMA_MIN_SQ);
            weight.ln()
                - 0.5 * d as f64 * (2.0 * std::f64::consts::PI * var).ln()
                - squared_distance(&z, &c.centroid) / (2.0 * var)
        })
        .collect();
    Ok(-log_sum_exp(&log_terms))
}

/// Number of clusters found at each lambda of `grid`.
pub fn cluster_count_curve(points: &[Vec<f64>], grid: &[f64], cfg: &ClusterConfig) -> Result<Vec<(f64, usize)>> {
    grid.iter()
        .map(|&lambda| {
            let c = dp_means(points, &ClusterConfig { lambda, ..*cfg })?;
            Ok((lambda, c.k()))
        })
        .collect()
}

/// Picks a lambda from the longest run of consecutive grid points that share
/// the same non-trivial cluster count (`1 < k < n`), returning the run's
/// middle entry. Label-free; used to choose a resolution from a sweep.
pub fn plateau_lambda(curve: &[(f64, usize)], n: usize) -> Option<f64> {
    let mut best: Option<(usize, usize)> = None;
    let mut start = 0;
    for i in 0..=curve.len() {
        let run_ends = i == curve.len() || curve[i].1 != curve[start].1;
        if run_ends {
            let k = curve[start].1;
            let len = i - start;
            if k > 1 && k < n && best.is_none_or(|(_, l)| len > l) {
                best = Some((start, len));
            }
            start = i;
        }
    }
    best.map(|(s, len)| curve[s + (len - 1) / 2].0)
}
