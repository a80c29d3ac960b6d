// SPDX-License-Identifier: MIT OR Apache-2.0

//! Distributions over circuit edges and input-level anomaly detection.
//!
//! Every retained edge of a discovered circuit is mean-ablated on its own and
//! the geometry of every downstream pseudoclass is recomputed. An edge whose
//! removal inflates pseudoclass radius or dimension is one that contributes
//! to their reduction, so only increases are counted:
//!
//! ```text
//! radius_term    = Σ max(0, (R_ablated − R_full) / (R_full + ε))
//! dimension_term = Σ max(0, (D_ablated − D_full) / (D_full + ε))
//! raw_score      = w_R · radius_term + (1 − w_R) · dimension_term
//! ```
//!
//! The distribution over edges is `softmax(raw_score / temperature)`.
//!
//! Detection scores an input by the mean mixture NLL across clustered layers
//! and flags it when that score exceeds a threshold calibrated as a
//! nearest-rank quantile of clean scores.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::circuitdisc::{ablated_forward_unchecked, AblationContext, Circuit, ComputeGraph, Edge, RemovedMask};
use crate::error::{Error, Result};
use crate::manifold::{stats_for_clustering, ManifoldStats};
use crate::metrics::nearest_rank_quantile;
use crate::netcore::{ActivationTrace, Dataset, Network};
use crate::pseudoclass::{cluster_layer, mixture_nll, ClusterConfig, Clustering};

const SCORE_EPS: f64 = 1e-9;

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeScore {
    pub edge: Edge,
    pub raw_score: f64,
    pub radius_term: f64,
    pub dimension_term: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeScoring {
    pub scores: Vec<EdgeScore>,
    /// Edges that had no clustered layer downstream and were scored 0.
    pub warnings: Vec<String>,
}

/// Scores each retained edge of `circuit` by how much its single-edge
/// ablation inflates downstream pseudoclass geometry. `traces` must be the
/// unablated traces of every sample referenced by `clusterings`.
#[allow(clippy::too_many_arguments)]
pub fn score_edges(
    net: &Network,
    graph: &ComputeGraph,
    ctx: &AblationContext,
    circuit: &Circuit,
    clusterings: &[Clustering],
    traces: &[ActivationTrace],
    w_radius: f64,
) -> Result<EdgeScoring> {
    if !(0.0..=1.0).contains(&w_radius) {
        return Err(Error::invalid("w_R must lie in [0, 1]"));
    }
    if circuit.retained.is_empty() {
        return Err(Error::invalid("circuit has no retained edges to score"));
    }
    if clusterings.is_empty() {
        return Err(Error::invalid("no clusterings supplied"));
    }
    if circuit.group_size != graph.group_size() {
        return Err(Error::invalid("circuit and compute graph use different group sizes"));
    }
    if net.widths() != graph.widths() {
        return Err(Error::invalid("compute graph was built for a different network shape"));
    }
    for e in &circuit.retained {
        if !graph.contains(e) {
            return Err(Error::UnknownEdge {
                boundary: e.boundary,
                source_group: e.source,
                target_group: e.target,
            });
        }
    }

    let baseline: Vec<Vec<ManifoldStats>> = clusterings
        .iter()
        .map(|c| stats_for_clustering(traces, c))
        .collect::<Result<_>>()?;

    let mut scores = Vec::with_capacity(circuit.retained.len());
    let mut warnings = Vec::new();
    for &edge in &circuit.retained {
        let downstream: Vec<usize> = (0..clusterings.len())
            .filter(|&i| clusterings[i].layer_index > edge.boundary)
            .collect();
        if downstream.is_empty() {
            warnings.push(format!(
                "edge [{}, {}, {}] has no clustered layer downstream; scored 0",
                edge.boundary, edge.source, edge.target
            ));
            scores.push(EdgeScore {
                edge,
                raw_score: 0.0,
                radius_term: 0.0,
                dimension_term: 0.0,
            });
            continue;
        }

        let mask = RemovedMask::new(graph, &BTreeSet::from([edge]));
        let ablated: Vec<ActivationTrace> = traces
            .iter()
            .map(|t| {
                let mut a = ablated_forward_unchecked(net, graph, &mask, ctx, t.input());
                a.sample_id = t.sample_id;
                a
            })
            .collect();

        let (mut radius_term, mut dimension_term) = (0.0, 0.0);
        for i in downstream {
            let after = stats_for_clustering(&ablated, &clusterings[i])?;
            for (full, abl) in baseline[i].iter().zip(&after) {
                radius_term += ((abl.radius - full.radius) / (full.radius + SCORE_EPS)).max(0.0);
                dimension_term += ((abl.dimension - full.dimension) / (full.dimension + SCORE_EPS)).max(0.0);
            }
        }
        scores.push(EdgeScore {
            edge,
            raw_score: w_radius * radius_term + (1.0 - w_radius) * dimension_term,
            radius_term,
            dimension_term,
        });
    }
    Ok(EdgeScoring { scores, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitDistribution {
    pub scores: Vec<EdgeScore>,
    pub probabilities: Vec<f64>,
    pub temperature: f64,
    pub lambda: Option<f64>,
    pub layers: Vec<usize>,
}

impl CircuitDistribution {
    pub fn probability_of(&self, edge: &Edge) -> Option<f64> {
        self.scores
            .iter()
            .position(|s| &s.edge == edge)
            .map(|i| self.probabilities[i])
    }
}

pub fn to_distribution(scores: &[EdgeScore], temperature: f64) -> Result<CircuitDistribution> {
    if scores.is_empty() {
        return Err(Error::invalid("cannot build a distribution from zero edge scores"));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid("temperature must be positive and finite"));
    }
    let logits: Vec<f64> = scores.iter().map(|s| s.raw_score / temperature).collect();
    Ok(CircuitDistribution {
        scores: scores.to_vec(),
        probabilities: crate::numeric::softmax(&logits),
        temperature,
        lambda: None,
        layers: Vec::new(),
    })
}

/// Thresholded mixture-likelihood detector over one or more clustered layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionModel {
    pub clusterings: Vec<Clustering>,
    pub threshold: f64,
    pub quantile: f64,
    pub layer_weights: Vec<f64>,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

/// Per-layer NLL of `x` and their weighted mean.
pub fn combined_score(
    net: &Network,
    clusterings: &[Clustering],
    layer_weights: &[f64],
    x: &[f64],
) -> Result<(Vec<(usize, f64)>, f64)> {
    let trace = net.forward(x)?;
    combined_score_from_trace(&trace, clusterings, layer_weights)
}

fn combined_score_from_trace(
    trace: &ActivationTrace,
    clusterings: &[Clustering],
    layer_weights: &[f64],
) -> Result<(Vec<(usize, f64)>, f64)> {
    let mut per_layer = Vec::with_capacity(clusterings.len());
    let mut total = 0.0;
    for (c, w) in clusterings.iter().zip(layer_weights) {
        let v = trace
            .layer(c.layer_index)
            .ok_or_else(|| Error::invalid(format!("trace lacks layer {}", c.layer_index)))?;
        let nll = mixture_nll(c, v)?;
        per_layer.push((c.layer_index, nll));
        total += w * nll;
    }
    let weight_sum: f64 = layer_weights.iter().sum();
    Ok((per_layer, total / weight_sum))
}

fn check_detector_parts(clusterings: &[Clustering], layer_weights: &[f64]) -> Result<()> {
    if clusterings.is_empty() {
        return Err(Error::invalid("detector needs at least one clustering"));
    }
    if layer_weights.len() != clusterings.len() {
        return Err(Error::invalid("one layer weight per clustering is required"));
    }
    if layer_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || layer_weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::invalid("layer weights must be nonnegative with a positive sum"));
    }
    Ok(())
}

pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0; n]
}

/// Nearest-rank `q`-quantile of the combined scores of `clean_validation`.
pub fn calibrate_threshold(
    net: &Network,
    clusterings: &[Clustering],
    layer_weights: &[f64],
    clean_validation: &Dataset,
    q: f64,
) -> Result<f64> {
    check_detector_parts(clusterings, layer_weights)?;
    if clean_validation.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid(format!("quantile must lie in (0, 1], got {q}")));
    }
    let scores = clean_validation
        .inputs()
        .iter()
        .map(|x| combined_score(net, clusterings, layer_weights, x).map(|(_, s)| s))
        .collect::<Result<Vec<f64>>>()?;
    Ok(nearest_rank_quantile(&scores, q))
}

impl DetectionModel {
    /// Builds a detector with uniform layer weights and a calibrated threshold.
    pub fn calibrate(net: &Network, clusterings: Vec<Clustering>, clean_validation: &Dataset, q: f64) -> Result<Self> {
        let layer_weights = uniform_weights(clusterings.len());
        let threshold = calibrate_threshold(net, &clusterings, &layer_weights, clean_validation, q)?;
        Ok(Self {
            clusterings,
            threshold,
            quantile: q,
            layer_weights,
            top_k: DEFAULT_TOP_K,
        })
    }

    pub fn score(&self, net: &Network, x: &[f64]) -> Result<f64> {
        combined_score(net, &self.clusterings, &self.layer_weights, x).map(|(_, s)| s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeAttribution {
    pub edge: Edge,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub sample_id: usize,
    /// `(layer index, mixture NLL)` for every clustered layer.
    pub layer_nll: Vec<(usize, f64)>,
    pub combined_score: f64,
    pub threshold: f64,
    pub is_anomalous: bool,
    /// Highest `‖group activation − calibration mean‖ · edge probability` first.
    pub top_edges: Vec<EdgeAttribution>,
}

pub fn detect(
    model: &DetectionModel,
    net: &Network,
    graph: &ComputeGraph,
    ctx: &AblationContext,
    distribution: &CircuitDistribution,
    sample_id: usize,
    x: &[f64],
) -> Result<AnomalyReport> {
    check_detector_parts(&model.clusterings, &model.layer_weights)?;
    if !model.threshold.is_finite() {
        return Err(Error::invalid("detector threshold is not finite"));
    }
    let trace = net.forward(x)?;
    let (layer_nll, combined) = combined_score_from_trace(&trace, &model.clusterings, &model.layer_weights)?;

    let mut attributions: Vec<EdgeAttribution> = distribution
        .scores
        .iter()
        .zip(&distribution.probabilities)
        .filter(|(s, _)| graph.contains(&s.edge))
        .map(|(s, &p)| {
            let range = graph.group_range(s.edge.boundary, s.edge.source);
            let live = &trace.per_layer[s.edge.boundary][range.clone()];
            let mean = &ctx.boundary_mean(s.edge.boundary)[range];
            let dist = live
                .iter()
                .zip(mean)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            EdgeAttribution {
                edge: s.edge,
                deviation: dist * p,
            }
        })
        .collect();
    // Stable sort keeps edge order among equal deviations.
    attributions.sort_by(|a, b| b.deviation.total_cmp(&a.deviation));
    attributions.truncate(model.top_k);

    Ok(AnomalyReport {
        sample_id,
        layer_nll,
        combined_score: combined,
        threshold: model.threshold,
        is_anomalous: combined > model.threshold,
        top_edges: attributions,
    })
}

/// Everything downstream of clustering that a sweep entry needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub standardize: bool,
    pub w_radius: f64,
    pub temperature: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let c = ClusterConfig::new(1.0);
        Self {
            max_iters: c.max_iters,
            tol: c.tol,
            standardize: c.standardize,
            w_radius: 0.5,
            temperature: 1.0,
        }
    }
}

impl SweepConfig {
    pub fn cluster_config(&self, lambda: f64) -> ClusterConfig {
        ClusterConfig {
            lambda,
            max_iters: self.max_iters,
            tol: self.tol,
            standardize: self.standardize,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub lambda: f64,
    pub clusterings: Vec<Clustering>,
    pub stats: Vec<Vec<ManifoldStats>>,
    pub distribution: CircuitDistribution,
    pub warnings: Vec<String>,
}

/// Inputs shared by every lambda of a sweep.
#[derive(Debug, Clone, Copy)]
pub struct PipelineInputs<'a> {
    pub net: &'a Network,
    pub graph: &'a ComputeGraph,
    pub ctx: &'a AblationContext,
    pub circuit: &'a Circuit,
    pub traces: &'a [ActivationTrace],
    pub layers: &'a [usize],
}

/// Clustering, geometry and edge distribution at a single lambda.
pub fn run_lambda(inputs: &PipelineInputs<'_>, lambda: f64, cfg: &SweepConfig) -> Result<SweepEntry> {
    let cluster_cfg = cfg.cluster_config(lambda);
    let clusterings = inputs
        .layers
        .iter()
        .map(|&l| cluster_layer(inputs.traces, l, &cluster_cfg))
        .collect::<Result<Vec<_>>>()?;
    let stats = clusterings
        .iter()
        .map(|c| stats_for_clustering(inputs.traces, c))
        .collect::<Result<Vec<_>>>()?;
    let scoring = score_edges(
        inputs.net,
        inputs.graph,
        inputs.ctx,
        inputs.circuit,
        &clusterings,
        inputs.traces,
        cfg.w_radius,
    )?;
    let mut distribution = to_distribution(&scoring.scores, cfg.temperature)?;
    distribution.lambda = Some(lambda);
    distribution.layers = inputs.layers.to_vec();
    Ok(SweepEntry {
        lambda,
        clusterings,
        stats,
        distribution,
        warnings: scoring.warnings,
    })
}

/// Runs [`run_lambda`] for every grid value. The grid must be nonempty and
/// strictly increasing; a failure at one lambda is reported in its slot
/// without affecting the others.
pub fn lambda_sweep(inputs: &PipelineInputs<'_>, grid: &[f64], cfg: &SweepConfig) -> Result<Vec<Result<SweepEntry>>> {
    if grid.is_empty() {
        return Err(Error::invalid("lambda grid is empty"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("lambda grid must be strictly increasing"));
    }
    Ok(grid
        .iter()
        .map(|&lambda| {
            run_lambda(inputs, lambda, cfg).map_err(|e| Error::Lambda {
                lambda,
                source: Box::new(e),
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(raw: f64, i: usize) -> EdgeScore {
        EdgeScore {
            edge: Edge::new(0, i, 0),
            raw_score: raw,
            radius_term: raw,
            dimension_term: raw,
        }
    }

    #[test]
    fn softmax_examples() {
        let d = to_distribution(&[score(0.0, 0), score(2f64.ln(), 1)], 1.0).unwrap();
        assert!((d.probabilities[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((d.probabilities[1] - 2.0 / 3.0).abs() < 1e-12);

        let single = to_distribution(&[score(5.0, 0)], 0.3).unwrap();
        assert_eq!(single.probabilities, vec![1.0]);

        let flat = to_distribution(&[score(1.5, 0), score(1.5, 1), score(1.5, 2)], 2.0).unwrap();
        for p in flat.probabilities {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn distribution_rejects_bad_arguments() {
        assert!(to_distribution(&[], 1.0).is_err());
        assert!(to_distribution(&[score(1.0, 0)], 0.0).is_err());
    }

    #[test]
    fn sweep_grid_must_increase() {
        let net = Network::random(2, &[(2, crate::netcore::Activation::Identity)], 0).unwrap();
        let graph = crate::circuitdisc::build_graph(&net, 1).unwrap();
        let traces = net.forward_batch(&[vec![0.0, 1.0]]).unwrap();
        let ctx = crate::circuitdisc::ablation_context_from_traces(&traces, &graph);
        let circuit = Circuit {
            group_size: 1,
            tau: 0.0,
            retained: graph.edges(),
            removed: vec![],
            model_hash: String::new(),
        };
        let inputs = PipelineInputs {
            net: &net,
            graph: &graph,
            ctx: &ctx,
            circuit: &circuit,
            traces: &traces,
            layers: &[1],
        };
        assert!(lambda_sweep(&inputs, &[], &SweepConfig::default()).is_err());
        assert!(lambda_sweep(&inputs, &[1.0, 1.0], &SweepConfig::default()).is_err());
    }
}
