// SPDX-License-Identifier: MIT OR Apache-2.0

//! Payloads stored under the `data` key of each artifact.

use std::collections::BTreeMap;
use std::ops::Range;

use facade_core::attacks::AttackSpec;
use facade_core::circuitdisc::{AblationContext, AcdcStep, Circuit};
use facade_core::facade::{AnomalyReport, CircuitDistribution, DetectionModel};
use facade_core::manifold::{ManifoldStats, StatsDelta};
use facade_core::netcore::{ActivationTrace, Dataset, Network};
use facade_core::pseudoclass::Clustering;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::manifest::Split;

/// Half-open index ranges of the contiguous splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: [usize; 2],
    pub val: [usize; 2],
    pub test: [usize; 2],
}

impl Splits {
    /// `None` when any split would be empty.
    pub fn new(n: usize, split: Split) -> Option<Self> {
        let a = (split.train * n as f64).floor() as usize;
        let b = a + (split.val * n as f64).floor() as usize;
        (a > 0 && b > a && n > b).then_some(Self {
            train: [0, a],
            val: [a, b],
            test: [b, n],
        })
    }

    pub fn range(r: [usize; 2]) -> Range<usize> {
        r[0]..r[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetData {
    pub dataset: Dataset,
    pub splits: Splits,
}

impl DatasetData {
    pub fn split(&self, which: &str) -> facade_core::Result<Dataset> {
        let r = match which {
            "train" => self.splits.train,
            "val" => self.splits.val,
            _ => self.splits.test,
        };
        self.dataset.slice(Splits::range(r), which)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelData {
    /// `"trained"` or `"file"`.
    pub source: String,
    pub network: Network,
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TracesData {
    pub split: String,
    pub traces: Vec<ActivationTrace>,
}

/// One clustering, addressed by `(model_hash, layer, lambda)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteringEntry {
    pub model_hash: String,
    pub layer: usize,
    pub lambda: f64,
    pub clustering: Clustering,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteringsData {
    pub entries: Vec<ClusteringEntry>,
}

impl ClusteringsData {
    pub fn find(&self, model_hash: &str, layer: usize, lambda: f64) -> Option<&Clustering> {
        self.entries
            .iter()
            .find(|e| e.model_hash == model_hash && e.layer == layer && e.lambda == lambda)
            .map(|e| &e.clustering)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitData {
    pub circuit: Circuit,
    pub steps: Vec<AcdcStep>,
    /// Mean KL of the discovered circuit from the full model.
    pub circuit_kl: f64,
    /// Per-boundary mean activations over the training split.
    pub ablation: AblationContext,
}

/// Pseudoclass geometry at one layer, under the full model and under the
/// discovered circuit (removed edges mean-ablated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerStats {
    pub layer: usize,
    pub full: Vec<ManifoldStats>,
    pub circuit: Vec<ManifoldStats>,
    /// `full − circuit` per pseudoclass.
    pub delta: Vec<StatsDelta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsData {
    pub lambda: f64,
    pub layers: Vec<LayerStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionData {
    pub distribution: CircuitDistribution,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorData {
    pub lambda: f64,
    pub validation_size: usize,
    pub detector: DetectionModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRow {
    pub adversarial: bool,
    pub report: AnomalyReport,
}

/// Detector verdicts on the clean test split and its attacked copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSummary {
    pub threshold: f64,
    /// ROC AUC of the combined score, adversarial as the positive class.
    pub auc: f64,
    pub clean_flagged: usize,
    pub adversarial_flagged: usize,
    pub rows: Vec<DetectionRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionsData {
    pub attack: AttackSpec,
    pub adversarial: Dataset,
    pub summary: DetectionSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSummary {
    pub layer: usize,
    pub k: usize,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl From<&Clustering> for ClusterSummary {
    fn from(c: &Clustering) -> Self {
        Self {
            layer: c.layer_index,
            k: c.k(),
            objective: c.objective,
            iterations: c.iterations,
            converged: c.converged,
        }
    }
}

/// Everything computed at one lambda.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaResult {
    pub lambda: f64,
    pub clusterings: Vec<ClusterSummary>,
    pub stats: Vec<LayerStats>,
    pub distribution: CircuitDistribution,
    pub warnings: Vec<String>,
    pub detection: DetectionSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRow {
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<LambdaResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepData {
    pub entries: Vec<SweepRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSummary {
    pub source: String,
    pub widths: Vec<usize>,
    pub epochs: usize,
    pub final_loss: Option<f64>,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitSummary {
    pub circuit: Circuit,
    pub edge_count: usize,
    pub circuit_kl: f64,
}

/// Merged view of a whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub schema_version: u32,
    pub manifest: Value,
    /// SHA-256 of every artifact merged into this report.
    pub artifacts: BTreeMap<String, String>,
    pub model: ModelSummary,
    pub circuit: CircuitSummary,
    /// The primary lambda first, then any sweep entries.
    pub lambdas: Vec<ReportEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportEntry {
    /// `"stages"` for the single-run stages, `"sweep"` for sweep rows.
    pub source: String,
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<LambdaResult>,
}

impl RunReport {
    /// Internal consistency checks; returns every violation found.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.lambdas.is_empty() {
            problems.push("report has no lambda entries".to_string());
        }
        for entry in &self.lambdas {
            let lambda = entry.lambda;
            match (&entry.result, &entry.error) {
                (Some(r), None) => {
                    if r.lambda != lambda {
                        problems.push(format!("entry lambda {lambda} holds a result for {}", r.lambda));
                    }
                    let total: f64 = r.distribution.probabilities.iter().sum();
                    if (total - 1.0).abs() > 1e-9 {
                        problems.push(format!("lambda {lambda}: probabilities sum to {total}"));
                    }
                    if r.distribution.probabilities.len() != r.distribution.scores.len() {
                        problems.push(format!("lambda {lambda}: probability and score counts differ"));
                    }
                    for (c, s) in r.clusterings.iter().zip(&r.stats) {
                        if c.layer != s.layer || c.k != s.full.len() || c.k != s.circuit.len() {
                            problems.push(format!("lambda {lambda}: stats disagree with clustering at layer {}", c.layer));
                        }
                    }
                    let d = &r.detection;
                    if !(0.0..=1.0).contains(&d.auc) {
                        problems.push(format!("lambda {lambda}: auc {} outside [0, 1]", d.auc));
                    }
                    let mut flagged = [0usize; 2];
                    for row in &d.rows {
                        let rep = &row.report;
                        if rep.is_anomalous != (rep.combined_score > rep.threshold) || rep.threshold != d.threshold {
                            problems.push(format!("lambda {lambda}: inconsistent verdict for sample {}", rep.sample_id));
                        }
                        flagged[row.adversarial as usize] += rep.is_anomalous as usize;
                    }
                    if flagged != [d.clean_flagged, d.adversarial_flagged] {
                        problems.push(format!("lambda {lambda}: flagged counts do not match rows"));
                    }
                }
                (None, Some(_)) => {}
                _ => problems.push(format!("lambda {lambda}: exactly one of result and error must be present")),
            }
        }
        let c = &self.circuit;
        if c.circuit.retained.len() + c.circuit.removed.len() != c.edge_count {
            problems.push("circuit edges do not partition the compute graph".into());
        }
        problems
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_are_contiguous_and_cover() {
        let s = Splits::new(1000, Split::default()).unwrap();
        assert_eq!(s, Splits { train: [0, 600], val: [600, 800], test: [800, 1000] });
        assert!(Splits::new(2, Split::default()).is_none());
    }
}
