//! Manifests, configuration, synthetic data and the batch commands.
//!
//! Errors are split into configuration problems (bad config, manifest or
//! architecture text, inconsistent strategy choices) and data problems
//! (unreadable images, missing ground truth, unusable markers) so a CLI can
//! map them to distinct exit codes.

mod commands;
mod config;
mod manifest;
mod run;
pub mod synth;

pub use commands::{
    cmd_evaluate, cmd_infer, cmd_learn_encoder, cmd_synth, cmd_train_merge, with_jobs, EvaluationReport, InferReport,
    TrainMergeReport, Variant,
};
pub use config::{InitStrategy, MetricsConfig, ParallelAxis, PipelineConfig, ThresholdConfig};
pub use manifest::{DatasetManifest, ManifestEntry};
pub use run::{
    evolved_saliencies, guide_for, process_image, write_artifacts, ImageResult, InferLayout, LevelRecord, Layout,
    RunRecord, StackRecord,
};
pub use synth::{oracle_markers, MarkerOracle, SynthFamily, SynthImage, SynthOptions};

use crate::error::Error;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(Error),
    #[error("data error: {0}")]
    Data(Error),
}

impl PipelineError {
    /// 2 for configuration errors, 3 for data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) => 3,
        }
    }

    pub fn inner(&self) -> &Error {
        match self {
            PipelineError::Config(e) | PipelineError::Data(e) => e,
        }
    }
}

pub(crate) trait Classify<T> {
    fn data(self) -> Result<T, PipelineError>;
}

impl<T> Classify<T> for crate::Result<T> {
    fn data(self) -> Result<T, PipelineError> {
        self.map_err(PipelineError::Data)
    }
}
