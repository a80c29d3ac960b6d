// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Labelled inputs. Every row has the same width and every entry is finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDataset")]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    seed: u64,
    name: String,
    /// Free-form record of how the data was derived, e.g. the attack that produced it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

#[derive(Deserialize)]
struct RawDataset {
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    seed: u64,
    name: String,
    #[serde(default)]
    provenance: Option<serde_json::Value>,
}

impl TryFrom<RawDataset> for Dataset {
    type Error = Error;

    fn try_from(raw: RawDataset) -> Result<Self> {
        let mut ds = Dataset::new(raw.name, raw.seed, raw.inputs, raw.labels)?;
        ds.provenance = raw.provenance;
        Ok(ds)
    }
}

impl Dataset {
    pub fn new(name: impl Into<String>, seed: u64, inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Validation("dataset must contain at least one sample".into()));
        }
        if inputs.len() != labels.len() {
            return Err(Error::Validation(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        let dim = inputs[0].len();
        if dim == 0 {
            return Err(Error::Validation("inputs must have positive width".into()));
        }
        for (i, row) in inputs.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Validation(format!("row {i} has width {}, expected {dim}", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("row {i} contains non-finite values")));
            }
        }
        Ok(Self {
            inputs,
            labels,
            seed,
            name: name.into(),
            provenance: None,
        })
    }

    pub fn with_provenance(mut self, provenance: serde_json::Value) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn provenance(&self) -> Option<&serde_json::Value> {
        self.provenance.as_ref()
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    /// One more than the largest label.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Rows `range` as a new dataset named `<name>/<suffix>`.
    pub fn slice(&self, range: std::ops::Range<usize>, suffix: &str) -> Result<Self> {
        if range.end > self.len() {
            return Err(Error::invalid(format!(
                "slice {range:?} exceeds dataset of {} rows",
                self.len()
            )));
        }
        Dataset::new(
            format!("{}/{suffix}", self.name),
            self.seed,
            self.inputs[range.clone()].to_vec(),
            self.labels[range].to_vec(),
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(self).map_err(Error::from_json)?;
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(Error::from_json)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_ragged() {
        assert!(Dataset::new("x", 0, vec![], vec![]).is_err());
        assert!(Dataset::new("x", 0, vec![vec![1.0], vec![1.0, 2.0]], vec![0, 1]).is_err());
        assert!(Dataset::new("x", 0, vec![vec![1.0]], vec![0, 1]).is_err());
    }

    #[test]
    fn json_roundtrip_keeps_provenance() {
        let ds = Dataset::new("d", 7, vec![vec![0.1, 0.2]], vec![1])
            .unwrap()
            .with_provenance(serde_json::json!({"kind": "fgsm", "epsilon": 0.3}));
        let text = serde_json::to_string(&ds).unwrap();
        let back: Dataset = serde_json::from_str(&text).unwrap();
        assert_eq!(ds, back);
        assert_eq!(back.num_classes(), 2);
    }
}
