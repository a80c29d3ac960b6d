// SPDX-License-Identifier: MIT OR Apache-2.0

//! File-based pipeline around `facade-core`.
//!
//! Each subcommand of the `facade` binary is one [`Stage`]: it reads a run
//! manifest and upstream JSON artifacts, and writes one artifact plus a
//! timing log into the output directory.

pub mod artifacts;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod stage;
pub mod store;

pub use error::{CliError, CliResult};
pub use manifest::RunManifest;
pub use pipeline::{run_all, run_stage, Options, StageOutcome};
pub use stage::Stage;
