//! Robustness benchmarking toolkit for multimodal models on Earth
//! Observation tasks: controlled image and text perturbations, unified
//! answer scoring, robustness metrics and preference-corpus construction.

pub mod assignment;
pub mod data;
pub mod dpo;
pub mod error;
pub mod hash;
pub mod image_perturb;
pub mod jsonl;
pub mod metrics;
pub mod preference;
pub mod scoring;
pub mod synth;
pub mod text_perturb;

pub use data::{
    AnswerKind, AnswerStructure, BoundingBox, Condition, ConditionIndex, ConditionSet, CoordinateConvention, Manifest,
    ResponseRecord, SampleRecord, TaskKind,
};
pub use error::{Error, Result};
pub use image_perturb::{perturb_image, PerturbParams, RgbImage};
pub use metrics::{EvalRecord, MetricReport};
pub use preference::{CandidatePool, PreferenceTriplet};
pub use scoring::{score_response, QualityScore};
pub use text_perturb::TextRegime;
