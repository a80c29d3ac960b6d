// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run manifests: every knob of a pipeline run in one JSON file.

use std::path::{Path, PathBuf};

use facade_core::attacks::AttackSpec;
use facade_core::netcore::Activation;
use facade_core::pseudoclass::ClusterConfig;
use facade_core::synthdata::{GenKind, GenSpec};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};
use crate::stage::Stage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub seed: u64,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub split: Split,
    pub model: ModelSource,
    /// Trace indices to cluster (0 is the input, `i` the output of layer `i`).
    pub layers: Vec<usize>,
    /// Lambda used by the single-run stages.
    pub lambda: f64,
    /// Extra lambdas for `sweep`; may be empty.
    #[serde(default)]
    pub lambda_grid: Vec<f64>,
    #[serde(default)]
    pub clustering: ClusterOptions,
    /// Group size of the compute graph.
    pub g: usize,
    /// ACDC threshold; `null` removes every edge.
    pub tau: Option<f64>,
    #[serde(default = "half")]
    pub w_radius: f64,
    #[serde(default = "one")]
    pub temperature: f64,
    /// Calibration quantile of the clean validation scores.
    pub q: f64,
    pub attack: AttackSpec,
}

fn half() -> f64 {
    0.5
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Generate(GenerateSpec),
    File(FileRef),
}

/// Generator settings; the seed comes from the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    pub kind: GenKind,
    pub n: usize,
    pub dim: usize,
    pub num_classes: usize,
    pub separation: f64,
    pub noise_std: f64,
}

/// A file input, optionally pinned by its SHA-256.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRef {
    pub path: PathBuf,
    #[serde(default)]
    pub sha256: Option<String>,
}

/// Contiguous train/validation fractions; the remainder is the test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: f64,
    pub val: f64,
}

impl Default for Split {
    fn default() -> Self {
        Self { train: 0.6, val: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    Train(TrainSpec),
    File(FileRef),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    /// Hidden layers; the identity output layer is sized from the labels.
    pub hidden: Vec<HiddenLayer>,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HiddenLayer {
    pub width: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub standardize: bool,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        let c = ClusterConfig::new(1.0);
        Self {
            max_iters: c.max_iters,
            tol: c.tol,
            standardize: c.standardize,
        }
    }
}

impl RunManifest {
    /// Reads, resolves relative paths against the manifest's directory,
    /// applies a seed override and validates.
    pub fn load(path: &Path, seed_override: Option<u64>) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut manifest: RunManifest = serde_json::from_str(&text).map_err(|e| CliError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let DatasetSource::File(f) = &mut manifest.dataset {
            f.path = base.join(&f.path);
        }
        if let ModelSource::File(f) = &mut manifest.model {
            f.path = base.join(&f.path);
        }
        if let Some(seed) = seed_override {
            manifest.seed = seed;
        }
        manifest.validate().map_err(|message| CliError::Manifest {
            path: path.to_path_buf(),
            message,
        })?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<(), String> {
        if let DatasetSource::Generate(g) = &self.dataset {
            self.gen_spec_of(g).validate().map_err(|e| format!("dataset: {e}"))?;
        }
        for f in [self.dataset_file(), self.model_file()].into_iter().flatten() {
            if let Some(h) = &f.sha256 {
                if h.len() != 64 || !h.chars().all(|c| c.is_ascii_hexdigit()) {
                    return Err(format!("sha256 of {} must be 64 hex digits", f.path.display()));
                }
            }
        }
        let Split { train, val } = self.split;
        if !(train > 0.0 && val > 0.0 && train + val < 1.0) {
            return Err("split: train and val must be positive with train + val < 1".into());
        }
        if let ModelSource::Train(t) = &self.model {
            if t.hidden.iter().any(|h| h.width == 0) {
                return Err("model: hidden widths must be positive".into());
            }
            if !(t.lr > 0.0 && t.lr.is_finite()) || t.epochs == 0 || t.batch_size == 0 {
                return Err("model: lr must be positive and epochs, batch_size at least 1".into());
            }
        }
        if self.layers.is_empty() {
            return Err("layers must list at least one trace index".into());
        }
        if self.layers.windows(2).any(|w| w[0] >= w[1]) {
            return Err("layers must be strictly increasing".into());
        }
        self.cluster_config(self.lambda).validate().map_err(|e| format!("clustering: {e}"))?;
        if self.lambda_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err("lambda_grid must be strictly increasing".into());
        }
        if self.lambda_grid.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err("lambda_grid values must be positive and finite".into());
        }
        if self.g == 0 {
            return Err("g must be at least 1".into());
        }
        if let Some(t) = self.tau {
            if !(t >= 0.0 && t.is_finite()) {
                return Err("tau must be non-negative and finite, or null".into());
            }
        }
        if !(0.0..=1.0).contains(&self.w_radius) {
            return Err("w_radius must lie in [0, 1]".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err("temperature must be positive".into());
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err("q must lie in (0, 1]".into());
        }
        self.attack_spec().validate().map_err(|e| format!("attack: {e}"))?;
        Ok(())
    }

    fn gen_spec_of(&self, g: &GenerateSpec) -> GenSpec {
        GenSpec {
            kind: g.kind,
            n: g.n,
            dim: g.dim,
            num_classes: g.num_classes,
            separation: g.separation,
            noise_std: g.noise_std,
            seed: self.seed,
        }
    }

    pub fn gen_spec(&self) -> Option<GenSpec> {
        match &self.dataset {
            DatasetSource::Generate(g) => Some(self.gen_spec_of(g)),
            DatasetSource::File(_) => None,
        }
    }

    pub fn dataset_file(&self) -> Option<&FileRef> {
        match &self.dataset {
            DatasetSource::File(f) => Some(f),
            DatasetSource::Generate(_) => None,
        }
    }

    pub fn model_file(&self) -> Option<&FileRef> {
        match &self.model {
            ModelSource::File(f) => Some(f),
            ModelSource::Train(_) => None,
        }
    }

    /// Seed for weight initialisation.
    pub fn init_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    /// Seed for minibatch shuffling.
    pub fn shuffle_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }

    pub fn cluster_config(&self, lambda: f64) -> ClusterConfig {
        ClusterConfig {
            lambda,
            max_iters: self.clustering.max_iters,
            tol: self.clustering.tol,
            standardize: self.clustering.standardize,
        }
    }

    pub fn attack_spec(&self) -> AttackSpec {
        AttackSpec {
            seed: self.seed.wrapping_add(3),
            ..self.attack
        }
    }

    /// Settings consumed by `stage` itself.
    fn slice(&self, stage: Stage) -> Value {
        match stage {
            Stage::GenData => json!({ "seed": self.seed, "dataset": self.dataset, "split": self.split }),
            Stage::Train => json!({ "seed": self.seed, "model": self.model }),
            Stage::Cluster => json!({ "layers": self.layers, "lambda": self.lambda, "clustering": self.clustering }),
            Stage::Discover => json!({ "g": self.g, "tau": self.tau }),
            Stage::Score => json!({ "w_radius": self.w_radius, "temperature": self.temperature }),
            Stage::Calibrate => json!({ "q": self.q }),
            Stage::Detect => json!({ "attack": self.attack_spec() }),
            Stage::Sweep => json!({
                "layers": self.layers,
                "lambda_grid": self.lambda_grid,
                "clustering": self.clustering,
                "w_radius": self.w_radius,
                "temperature": self.temperature,
                "q": self.q,
                "attack": self.attack_spec(),
            }),
            Stage::Trace | Stage::Stats | Stage::Report => Value::Null,
        }
    }

    /// Settings that determine the artifact of `stage`: its own slice and
    /// those of every upstream stage.
    pub fn params_for(&self, stage: Stage) -> Value {
        let map: serde_json::Map<String, Value> = stage
            .closure()
            .into_iter()
            .map(|s| (s.name().to_string(), self.slice(s)))
            .filter(|(_, v)| !v.is_null())
            .collect();
        Value::Object(map)
    }
}
