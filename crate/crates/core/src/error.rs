// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every stage of the pipeline.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix did not have the expected length.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Input rejected by a precondition check.
    #[error("rejected input: {0}")]
    InvalidInput(String),

    /// A computation produced NaN or infinity.
    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("training diverged at epoch {epoch}: mean loss is not finite")]
    TrainingDiverged { epoch: usize },

    /// Malformed JSON. Line and column are 1-based.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    /// Well-formed data that violates a structural invariant.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown edge ({boundary}, {source_group}, {target_group})")]
    UnknownEdge {
        boundary: usize,
        source_group: usize,
        target_group: usize,
    },

    #[error("eigendecomposition did not converge for pseudoclass {pseudoclass}")]
    EigenFailure { pseudoclass: usize },

    #[error("sample {0} is missing from the supplied traces")]
    MissingSample(usize),

    /// A failure inside one entry of a lambda sweep.
    #[error("lambda {lambda}: {source}")]
    Lambda {
        lambda: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn from_json(err: serde_json::Error) -> Self {
        if err.is_io() {
            return Error::Io(err.into());
        }
        if err.is_data() {
            // Structurally valid JSON whose content failed a type or invariant check.
            return Error::Validation(err.to_string());
        }
        Error::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}

pub(crate) fn check_finite(context: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{context} contains non-finite values")))
    }
}
