//! Pipeline orchestration for the robustness benchmark: run configuration,
//! resumable stages over a run directory, and the run log.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod runlog;
pub mod stages;
pub mod workers;

pub use config::{ResponderMode, RunConfig};
pub use error::{PipelineError, Result};
pub use pipeline::{run_pipeline, sweep_strength, Pipeline, RunPaths, Stage};
