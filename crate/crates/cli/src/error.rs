use std::path::PathBuf;

use rs_bench_core::Error as CoreError;
use thiserror::Error;

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` requires {}; run the earlier stage first", missing.display())]
    StageDependencyMissing { stage: &'static str, missing: PathBuf },

    #[error("{count} rewrite(s) rejected; see {}", report.display())]
    RewritesRejected { count: usize, report: PathBuf },

    #[error(transparent)]
    Core(#[from] CoreError),
}

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DEPENDENCY: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => EXIT_CONFIG,
            PipelineError::StageDependencyMissing { .. } => EXIT_DEPENDENCY,
            PipelineError::RewritesRejected { .. } => EXIT_VALIDATION,
            PipelineError::Core(e) => match e {
                CoreError::MissingArtifact(_) => EXIT_DEPENDENCY,
                CoreError::Parse { .. }
                | CoreError::Validation { .. }
                | CoreError::InvalidReference(_)
                | CoreError::MissingRewrite(_)
                | CoreError::LengthMismatch { .. }
                | CoreError::UnsupportedRegime(_)
                | CoreError::Json(_) => EXIT_VALIDATION,
                _ => EXIT_FAILURE,
            },
        }
    }
}
