// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

use serde_json::{json, Value};

use crate::stage::Stage;

/// Everything a pipeline invocation can fail with.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("invalid manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("stage `{stage}` needs {} from stage `{required}`, but it was not found; run `facade {required}` first", path.display())]
    Dependency { stage: Stage, required: Stage, path: PathBuf },

    #[error("stale artifact {}: {reason}", path.display())]
    Stale { path: PathBuf, reason: String },

    #[error("malformed artifact {}: {message}", path.display())]
    Artifact { path: PathBuf, message: String },

    #[error("stage `{stage}` failed: {source}")]
    Core {
        stage: Stage,
        #[source]
        source: facade_core::Error,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Usage(_) => "usage",
            Self::Manifest { .. } => "invalid_manifest",
            Self::Dependency { .. } => "missing_dependency",
            Self::Stale { .. } => "stale_artifact",
            Self::Artifact { .. } => "malformed_artifact",
            Self::Core { .. } => "stage_failed",
            Self::Io { .. } => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Dependency { .. } => 3,
            Self::Stale { .. } => 4,
            Self::Manifest { .. } => 5,
            Self::Artifact { .. } | Self::Core { .. } | Self::Io { .. } => 1,
        }
    }

    /// The single-line JSON object written to stderr.
    pub fn to_json(&self) -> Value {
        let mut obj = json!({ "error": self.kind(), "message": self.to_string() });
        let map = obj.as_object_mut().expect("object literal");
        match self {
            Self::Dependency { stage, required, path } => {
                map.insert("stage".into(), json!(stage.name()));
                map.insert("required_stage".into(), json!(required.name()));
                map.insert("path".into(), json!(path));
            }
            Self::Stale { path, .. } | Self::Artifact { path, .. } | Self::Io { path, .. } | Self::Manifest { path, .. } => {
                map.insert("path".into(), json!(path));
            }
            Self::Core { stage, .. } => {
                map.insert("stage".into(), json!(stage.name()));
            }
            Self::Usage(_) => {}
        }
        obj
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}

/// Attaches the failing stage to core errors.
pub(crate) trait InStage<T> {
    fn in_stage(self, stage: Stage) -> CliResult<T>;
}

impl<T> InStage<T> for facade_core::Result<T> {
    fn in_stage(self, stage: Stage) -> CliResult<T> {
        self.map_err(|source| CliError::Core { stage, source })
    }
}
