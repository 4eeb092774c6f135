//! Experiment orchestration for the 2-D domain-guidance study: config
//! parsing, the pre-train / fine-tune / sample / evaluate pipeline with a
//! resumable manifest, plot-data export, and multi-seed aggregation.

pub mod aggregate;
pub mod config;
pub mod csvio;
pub mod error;
pub mod figure2;
pub mod manifest;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use error::{LabError, Result};
pub use manifest::RunManifest;
pub use pipeline::{run_pipeline, PipelineOutcome};
