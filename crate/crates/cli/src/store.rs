// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reading and writing stage artifacts.
//!
//! Every artifact is a JSON envelope
//! `{"artifact", "schema_version", "params", "inputs", "data"}` where
//! `params` is the manifest slice that produced it and `inputs` maps each
//! consumed artifact kind to the SHA-256 of the file that was read.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::stage::Stage;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope<T> {
    pub artifact: String,
    pub schema_version: u32,
    pub params: Value,
    pub inputs: BTreeMap<String, String>,
    pub data: T,
}

/// A parsed artifact and the hash of the bytes it was parsed from.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub stage: Stage,
    pub path: PathBuf,
    pub sha256: String,
    pub envelope: Envelope<T>,
}

impl<T> Loaded<T> {
    pub fn data(&self) -> &T {
        &self.envelope.data
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Output directory plus explicit `--stage-input` overrides.
#[derive(Debug, Clone)]
pub struct Store {
    out_dir: PathBuf,
    overrides: BTreeMap<Stage, PathBuf>,
}

impl Store {
    pub fn new(out_dir: impl Into<PathBuf>, stage_inputs: &[PathBuf]) -> CliResult<Self> {
        let mut overrides = BTreeMap::new();
        for path in stage_inputs {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let kind = serde_json::from_str::<Value>(&text)
                .ok()
                .and_then(|v| v.get("artifact").and_then(Value::as_str).map(str::to_owned))
                .ok_or_else(|| CliError::Artifact {
                    path: path.clone(),
                    message: "not a stage artifact (missing `artifact` field)".into(),
                })?;
            let stage = Stage::from_artifact(&kind).ok_or_else(|| CliError::Artifact {
                path: path.clone(),
                message: format!("unknown artifact kind `{kind}`"),
            })?;
            if overrides.insert(stage, path.clone()).is_some() {
                return Err(CliError::Usage(format!("--stage-input given twice for `{kind}` artifacts")));
            }
        }
        Ok(Self {
            out_dir: out_dir.into(),
            overrides,
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    /// Where `stage`'s artifact is read from.
    pub fn input_path(&self, stage: Stage) -> PathBuf {
        self.overrides
            .get(&stage)
            .cloned()
            .unwrap_or_else(|| self.out_dir.join(stage.file_name()))
    }

    pub fn output_path(&self, stage: Stage) -> PathBuf {
        self.out_dir.join(stage.file_name())
    }

    pub fn exists(&self, stage: Stage) -> bool {
        self.input_path(stage).is_file()
    }

    /// Loads the artifact of `required` on behalf of `consumer`, checking
    /// its kind, schema version and that it was produced with `params`.
    pub fn load<T: DeserializeOwned>(&self, consumer: Stage, required: Stage, params: &Value) -> CliResult<Loaded<T>> {
        let path = self.input_path(required);
        if !path.is_file() {
            return Err(CliError::Dependency {
                stage: consumer,
                required,
                path,
            });
        }
        let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        let malformed = |message: String| CliError::Artifact {
            path: path.clone(),
            message,
        };
        let header: Envelope<serde::de::IgnoredAny> =
            serde_json::from_slice(&bytes).map_err(|e| malformed(e.to_string()))?;
        if header.artifact != required.artifact() {
            return Err(malformed(format!(
                "expected a `{}` artifact, found `{}`",
                required.artifact(),
                header.artifact
            )));
        }
        if header.schema_version != SCHEMA_VERSION {
            return Err(malformed(format!(
                "schema version {} is not supported (expected {SCHEMA_VERSION})",
                header.schema_version
            )));
        }
        if &header.params != params {
            return Err(CliError::Stale {
                path,
                reason: format!(
                    "it was produced with different manifest settings; rerun `facade {required}`"
                ),
            });
        }
        let envelope: Envelope<T> = serde_json::from_slice(&bytes).map_err(|e| malformed(e.to_string()))?;
        Ok(Loaded {
            stage: required,
            path,
            sha256: sha256_hex(&bytes),
            envelope,
        })
    }

    /// Writes an artifact and returns the SHA-256 of the written bytes.
    pub fn write<T: Serialize>(&self, stage: Stage, params: Value, inputs: BTreeMap<String, String>, data: &T) -> CliResult<String> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| CliError::io(&self.out_dir, e))?;
        let envelope = Envelope {
            artifact: stage.artifact().to_string(),
            schema_version: SCHEMA_VERSION,
            params,
            inputs,
            data,
        };
        let mut text = serde_json::to_string_pretty(&envelope).map_err(|e| CliError::Artifact {
            path: self.output_path(stage),
            message: e.to_string(),
        })?;
        text.push('\n');
        let path = self.output_path(stage);
        std::fs::write(&path, &text).map_err(|e| CliError::io(&path, e))?;
        Ok(sha256_hex(text.as_bytes()))
    }

    pub fn write_log(&self, stage: Stage, text: &str) -> CliResult<()> {
        let path = self.out_dir.join(stage.log_name());
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}

/// Identity of a loaded artifact, for cross-checking recorded inputs.
#[derive(Debug, Clone)]
pub struct Provenance<'a> {
    pub stage: Stage,
    pub path: &'a Path,
    pub sha256: &'a str,
    pub inputs: &'a BTreeMap<String, String>,
}

impl<'a, T> From<&'a Loaded<T>> for Provenance<'a> {
    fn from(l: &'a Loaded<T>) -> Self {
        Provenance {
            stage: l.stage,
            path: &l.path,
            sha256: &l.sha256,
            inputs: &l.envelope.inputs,
        }
    }
}

/// Fails if any loaded artifact records a different hash for another
/// loaded artifact than the one actually read.
pub fn check_consistent(loaded: &[Provenance<'_>]) -> CliResult<()> {
    for a in loaded {
        for b in loaded {
            if let Some(recorded) = a.inputs.get(b.stage.artifact()) {
                if recorded != b.sha256 {
                    return Err(CliError::Stale {
                        path: a.path.to_path_buf(),
                        reason: format!(
                            "it was built from a different {} ({}); rerun `facade {}`",
                            b.stage.file_name(),
                            b.path.display(),
                            a.stage
                        ),
                    });
                }
            }
        }
    }
    Ok(())
}

/// The `inputs` map for a new artifact.
pub fn input_hashes(loaded: &[Provenance<'_>]) -> BTreeMap<String, String> {
    loaded
        .iter()
        .map(|p| (p.stage.artifact().to_string(), p.sha256.to_string()))
        .collect()
}
