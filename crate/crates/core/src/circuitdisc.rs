// SPDX-License-Identifier: MIT OR Apache-2.0

//! Circuit discovery over a grouped computational graph.
//!
//! Each activation vector of a trace (input, then every layer output) is a
//! *boundary*. Units at a boundary are partitioned into contiguous groups of
//! `g` units, and an [`Edge`] `(l, s, t)` connects group `s` at boundary `l`
//! to group `t` at boundary `l + 1` through the weight block `W_l[t, s]`.
//!
//! Removing an edge mean-ablates it: the target group's pre-activation sees
//! the calibration mean of the source group instead of its live activation.
//! [`acdc_discover`] greedily removes edges, last boundary first, while the
//! output KL divergence from the full model stays below `tau`.

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::netcore::{ActivationTrace, Dataset, Network};
use crate::numeric::kl_from_logits;

/// `(boundary, source group, target group)`. Serialized as `[l, s, t]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Edge {
    pub boundary: usize,
    pub source: usize,
    pub target: usize,
}

impl Edge {
    pub const fn new(boundary: usize, source: usize, target: usize) -> Self {
        Self {
            boundary,
            source,
            target,
        }
    }
}

impl From<[usize; 3]> for Edge {
    fn from([boundary, source, target]: [usize; 3]) -> Self {
        Self::new(boundary, source, target)
    }
}

impl From<Edge> for [usize; 3] {
    fn from(e: Edge) -> Self {
        [e.boundary, e.source, e.target]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputeGraph {
    group_size: usize,
    /// Width of every boundary, input first.
    widths: Vec<usize>,
}

impl ComputeGraph {
    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Number of layer-to-layer boundaries (one per network layer).
    pub fn num_boundaries(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn num_groups(&self, boundary: usize) -> usize {
        self.widths[boundary].div_ceil(self.group_size)
    }

    /// Unit indices of group `group` at `boundary`.
    pub fn group_range(&self, boundary: usize, group: usize) -> Range<usize> {
        let start = group * self.group_size;
        start..(start + self.group_size).min(self.widths[boundary])
    }

    /// Every edge, ordered by `(boundary, source, target)`.
    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::with_capacity(self.edge_count());
        for l in 0..self.widths.len() - 1 {
            for s in 0..self.num_groups(l) {
                for t in 0..self.num_groups(l + 1) {
                    out.push(Edge::new(l, s, t));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        (0..self.widths.len() - 1)
            .map(|l| self.num_groups(l) * self.num_groups(l + 1))
            .sum()
    }

    pub fn contains(&self, e: &Edge) -> bool {
        e.boundary + 1 < self.widths.len()
            && e.source < self.num_groups(e.boundary)
            && e.target < self.num_groups(e.boundary + 1)
    }

    fn check_edges<'a>(&self, edges: impl IntoIterator<Item = &'a Edge>) -> Result<()> {
        for e in edges {
            if !self.contains(e) {
                return Err(Error::UnknownEdge {
                    boundary: e.boundary,
                    source_group: e.source,
                    target_group: e.target,
                });
            }
        }
        Ok(())
    }

    fn check_network(&self, net: &Network) -> Result<()> {
        if net.widths() != self.widths {
            return Err(Error::invalid("compute graph was built for a different network shape"));
        }
        Ok(())
    }
}

pub fn build_graph(net: &Network, group_size: usize) -> Result<ComputeGraph> {
    if group_size == 0 {
        return Err(Error::invalid("group size must be at least 1"));
    }
    Ok(ComputeGraph {
        group_size,
        widths: net.widths(),
    })
}

/// Mean activation of every unit at every source boundary over a calibration set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationContext {
    group_size: usize,
    /// `means[l]` is the full mean activation vector at boundary `l`.
    means: Vec<Vec<f64>>,
}

impl AblationContext {
    pub fn group_mean<'a>(&'a self, graph: &ComputeGraph, boundary: usize, group: usize) -> &'a [f64] {
        &self.means[boundary][graph.group_range(boundary, group)]
    }

    pub fn boundary_mean(&self, boundary: usize) -> &[f64] {
        &self.means[boundary]
    }
}

pub fn compute_ablation_context(net: &Network, calibration: &Dataset, graph: &ComputeGraph) -> Result<AblationContext> {
    graph.check_network(net)?;
    if calibration.is_empty() {
        return Err(Error::invalid("calibration set is empty"));
    }
    let traces = net.forward_batch(calibration.inputs())?;
    Ok(ablation_context_from_traces(&traces, graph))
}

pub fn ablation_context_from_traces(traces: &[ActivationTrace], graph: &ComputeGraph) -> AblationContext {
    // Only boundaries that feed a layer are ever ablated.
    let sources = graph.num_boundaries();
    let n = traces.len() as f64;
    let means = (0..sources)
        .map(|l| {
            let mut m = vec![0.0; graph.widths()[l]];
            for t in traces {
                for (acc, v) in m.iter_mut().zip(&t.per_layer[l]) {
                    *acc += v;
                }
            }
            m.iter_mut().for_each(|v| *v /= n);
            m
        })
        .collect();
    AblationContext {
        group_size: graph.group_size(),
        means,
    }
}

/// Forward pass with the edges in `removed` mean-ablated:
/// `pre_t = b_t + Σ_s W[t, s] · (removed(l, s, t) ? mean_s : act_s)`.
pub fn ablated_forward(
    net: &Network,
    graph: &ComputeGraph,
    removed: &BTreeSet<Edge>,
    ctx: &AblationContext,
    x: &[f64],
) -> Result<ActivationTrace> {
    graph.check_network(net)?;
    graph.check_edges(removed)?;
    if ctx.group_size != graph.group_size() || ctx.means.len() != graph.num_boundaries() {
        return Err(Error::invalid("ablation context does not match the compute graph"));
    }
    net.check_input(x)?;
    let mask = RemovedMask::new(graph, removed);
    Ok(ablated_forward_unchecked(net, graph, &mask, ctx, x))
}

/// Dense per-boundary lookup of removed edges.
pub(crate) struct RemovedMask {
    // flags[l][s * groups(l+1) + t]
    flags: Vec<Vec<bool>>,
    any: Vec<bool>,
}

impl RemovedMask {
    pub(crate) fn new(graph: &ComputeGraph, removed: &BTreeSet<Edge>) -> Self {
        let mut flags: Vec<Vec<bool>> = (0..graph.num_boundaries())
            .map(|l| vec![false; graph.num_groups(l) * graph.num_groups(l + 1)])
            .collect();
        let mut any = vec![false; flags.len()];
        for e in removed {
            flags[e.boundary][e.source * graph.num_groups(e.boundary + 1) + e.target] = true;
            any[e.boundary] = true;
        }
        Self { flags, any }
    }
}

pub(crate) fn ablated_forward_unchecked(
    net: &Network,
    graph: &ComputeGraph,
    mask: &RemovedMask,
    ctx: &AblationContext,
    x: &[f64],
) -> ActivationTrace {
    let mut per_layer = Vec::with_capacity(net.num_layers() + 1);
    per_layer.push(x.to_vec());
    for (l, layer) in net.layers().iter().enumerate() {
        let act = &per_layer[l];
        let z = if !mask.any[l] {
            layer.pre_activation(act)
        } else {
            // Full pre-activation plus W[t,s]·(mean_s − act_s) for each removed block.
            let mean = &ctx.means[l];
            let targets = graph.num_groups(l + 1);
            let mut z = layer.pre_activation(act);
            for t in 0..targets {
                for s in 0..graph.num_groups(l) {
                    if !mask.flags[l][s * targets + t] {
                        continue;
                    }
                    let cols = graph.group_range(l, s);
                    let shift: Vec<f64> = cols.clone().map(|c| mean[c] - act[c]).collect();
                    for r in graph.group_range(l + 1, t) {
                        let w = &layer.weights.row(r)[cols.clone()];
                        z[r] += w.iter().zip(&shift).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
            z
        };
        per_layer.push(z.into_iter().map(|v| layer.activation.apply(v)).collect());
    }
    ActivationTrace { sample_id: 0, per_layer }
}

/// Mean over `data` of `KL(softmax(full) ‖ softmax(ablated))`.
fn mean_kl(
    net: &Network,
    graph: &ComputeGraph,
    mask: &RemovedMask,
    ctx: &AblationContext,
    inputs: &[Vec<f64>],
    full_logits: &[Vec<f64>],
) -> f64 {
    let total: f64 = inputs
        .iter()
        .zip(full_logits)
        .map(|(x, full)| {
            let ablated = ablated_forward_unchecked(net, graph, mask, ctx, x);
            kl_from_logits(full, ablated.logits())
        })
        .sum();
    total / inputs.len() as f64
}

/// Mean output KL divergence from the full model when `removed` is ablated.
pub fn circuit_kl(
    net: &Network,
    graph: &ComputeGraph,
    removed: &BTreeSet<Edge>,
    ctx: &AblationContext,
    data: &Dataset,
) -> Result<f64> {
    graph.check_network(net)?;
    graph.check_edges(removed)?;
    let full: Vec<Vec<f64>> = data
        .inputs()
        .iter()
        .map(|x| net.logits(x))
        .collect::<Result<_>>()?;
    let mask = RemovedMask::new(graph, removed);
    Ok(mean_kl(net, graph, &mask, ctx, data.inputs(), &full))
}

/// A retained-edge subset of a compute graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    #[serde(rename = "g")]
    pub group_size: usize,
    /// Discovery threshold. `null` in JSON stands for `+inf`.
    #[serde(serialize_with = "ser_threshold", deserialize_with = "de_threshold")]
    pub tau: f64,
    pub retained: Vec<Edge>,
    pub removed: Vec<Edge>,
    pub model_hash: String,
}

fn ser_threshold<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn de_threshold<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

impl Circuit {
    pub fn removed_set(&self) -> BTreeSet<Edge> {
        self.removed.iter().copied().collect()
    }
}

/// One decision of the greedy sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcdcStep {
    pub edge: Edge,
    /// Mean KL from the full model with this edge tentatively removed.
    pub delta: f64,
    pub removed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discovery {
    pub circuit: Circuit,
    pub steps: Vec<AcdcStep>,
}

/// Order in which the sweep visits edges: last boundary first, ascending
/// `(source, target)` within a boundary.
pub fn acdc_order(graph: &ComputeGraph) -> Vec<Edge> {
    let mut edges = graph.edges();
    edges.sort_by(|a, b| b.boundary.cmp(&a.boundary).then((a.source, a.target).cmp(&(b.source, b.target))));
    edges
}

/// Greedy reverse sweep: an edge stays removed when the mean KL of the
/// current ablated model from the full model is strictly below `tau`.
pub fn acdc_discover(
    net: &Network,
    graph: &ComputeGraph,
    ctx: &AblationContext,
    data: &Dataset,
    tau: f64,
    model_hash: &str,
) -> Result<Discovery> {
    graph.check_network(net)?;
    if !(tau >= 0.0) {
        return Err(Error::invalid("tau must be non-negative"));
    }
    if data.is_empty() {
        return Err(Error::invalid("discovery data is empty"));
    }
    let full: Vec<Vec<f64>> = data
        .inputs()
        .iter()
        .map(|x| net.logits(x))
        .collect::<Result<_>>()?;

    let mut removed = BTreeSet::new();
    let mut steps = Vec::with_capacity(graph.edge_count());
    for edge in acdc_order(graph) {
        removed.insert(edge);
        let mask = RemovedMask::new(graph, &removed);
        let delta = mean_kl(net, graph, &mask, ctx, data.inputs(), &full);
        let keep_removed = delta < tau;
        if !keep_removed {
            removed.remove(&edge);
        }
        steps.push(AcdcStep {
            edge,
            delta,
            removed: keep_removed,
        });
    }

    let retained = graph.edges().into_iter().filter(|e| !removed.contains(e)).collect();
    Ok(Discovery {
        circuit: Circuit {
            group_size: graph.group_size(),
            tau,
            retained,
            removed: removed.into_iter().collect(),
            model_hash: model_hash.to_owned(),
        },
        steps,
    })
}
