//! Pipeline orchestration: each stage reads its upstream artifact from the
//! output directory and writes its own, tagged with the config hash and seed.

mod config;
mod stages;

use std::path::{Path, PathBuf};

use thiserror::Error;

use dexgrasp::dataset::DatasetError;
use dexgrasp::policy::PolicyError;
use dexgrasp::refine::{FunnelError, RefineError};
use dexgrasp::retarget::RetargetError;
use dexgrasp::sim::SimError;

pub use config::{EvalStage, FunnelStage, PipelineConfig, RefineStage, SyntheticDemos, TrainStage};
pub use stages::{
    augment, eval, funnel, pipeline, refine, retarget, run_stage, stats, synth_demos, template, train, EvalSummary, Stage, StageReport,
};

/// Artifact file names inside the output directory.
pub mod artifacts {
    pub const DEMOS: &str = "demos.ndjson";
    pub const RETARGETED: &str = "retargeted.ndjson";
    pub const TEMPLATED: &str = "templated.ndjson";
    pub const REFINED: &str = "refined.ndjson";
    pub const REFINE_REPORT: &str = "refine_report.json";
    pub const AUGMENTED: &str = "augmented.ndjson";
    pub const AUGMENT_REPORT: &str = "augment_report.json";
    pub const FUNNELED: &str = "funneled.ndjson";
    pub const FUNNEL_REPORT: &str = "funnel_report.json";
    /// Human demos plus every verified trajectory.
    pub const DATASET: &str = "dataset.ndjson";
    pub const POLICY: &str = "policy.json";
    pub const TRAIN_REPORT: &str = "train_report.json";
    pub const EVAL_REPORT: &str = "eval_report.json";
    pub const EVAL_TABLE: &str = "eval.txt";
    pub const STATS: &str = "stats.txt";
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing artifact {}: run {stage} first", path.display())]
    MissingArtifact { path: PathBuf, stage: &'static str },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact { .. } => 3,
            CliError::Numerical(_) => 4,
            CliError::Other(_) => 1,
        }
    }

    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Other(format!("{}: {e}", path.display()))
    }

    /// Prefixes the message with `what`, keeping the variant.
    pub(crate) fn context(self, what: &str) -> Self {
        match self {
            CliError::Config(m) => CliError::Config(format!("{what}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{what}: {m}")),
            CliError::Other(m) => CliError::Other(format!("{what}: {m}")),
            e @ CliError::MissingArtifact { .. } => e,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidSetup(_) | SimError::NumericalBlowup { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<RefineError> for CliError {
    fn from(e: RefineError) -> Self {
        match e {
            RefineError::Sim(s) => s.into(),
            RefineError::InvalidInput(m) => CliError::Config(m),
            e => CliError::Other(e.to_string()),
        }
    }
}

impl From<FunnelError> for CliError {
    fn from(e: FunnelError) -> Self {
        match e {
            FunnelError::Refine(r) => r.into(),
            e => CliError::Other(e.to_string()),
        }
    }
}

impl From<RetargetError> for CliError {
    fn from(e: RetargetError) -> Self {
        match e {
            RetargetError::InvalidConfig(m) => CliError::Config(m),
            e => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Sim(s) => s.into(),
            PolicyError::InvalidInput(m) => CliError::Config(m),
            PolicyError::NonFinite(m) => CliError::Numerical(m),
            e => CliError::Other(e.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Other(e.to_string())
    }
}
