//! Skill discovery: decomposing long demonstrations into single-step
//! (image, instruction, action) triples and assembling them into a training
//! dataset.
//!
//! Two decomposers exist. The rule decomposer labels actions geometrically
//! against template keypoints and is the offline ground truth; the LLM
//! decomposer prompts a chat model with few-shot exemplars and accepts only
//! responses that parse, count, and alternate correctly.

mod dataset;
mod decompose;
mod demo;

pub use dataset::{
    augment_flip, build_dataset, read_dataset, to_train_samples, write_dataset, Provenance,
    SkillDataset, SkillTriple,
};
pub use decompose::{
    decompose_llm, decompose_rule, decompose_user_payload, default_decompose_prompt,
    validate_decomposition, DecompositionReport, StepCheck, UNLABELABLE_FACTOR,
};
pub use demo::{generate_demo, load_demo, load_demos, save_demo, DemoAction, DemoSimInfo, Demonstration};

use thiserror::Error;

use crate::executor::ExecError;
use crate::grammar::GrammarError;
use crate::llm::LlmError;
use crate::sim::{RasterError, SimError};

#[derive(Debug, Error)]
pub enum SkillError {
    #[error("demonstration has no simulator states; the rule decomposer needs generated demos")]
    MissingSimStates,
    #[error("action {step} is {distance:.4} m from the nearest keypoint (threshold {threshold:.4} m)")]
    UnlabelableAction { step: usize, distance: f64, threshold: f64 },
    #[error("malformed llm response ({reason}); raw response preserved")]
    MalformedResponse { reason: String, raw: String },
    #[error("invalid demonstration: {0}")]
    InvalidDemo(String),
    #[error("dataset was built with vocabulary {found:#018x}, expected {expected:#018x}")]
    VocabMismatch { expected: u64, found: u64 },
    #[error("unsupported dataset schema version {0}")]
    UnsupportedSchema(u32),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}
