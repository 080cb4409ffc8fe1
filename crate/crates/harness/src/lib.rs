//! Experiment orchestration for the adversarial examiner: configuration,
//! the train / examine / weakness-study / strength / report commands, and
//! their byte-stable outputs.

pub mod config;
pub mod experiments;
pub mod manifest;
pub mod report;

use std::path::PathBuf;

pub use config::{ExaminerKind, ExperimentConfig, Overrides, Restriction, TargetSpec, TrainingSpec};
pub use experiments::{cmd_examine, cmd_report, cmd_strength, cmd_train, cmd_weakness_study, Outcome};
pub use manifest::Manifest;
pub use report::Report;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    /// Bad flags or configuration; nothing was evaluated.
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot write {}: {reason}", path.display())]
    CannotWrite { path: PathBuf, reason: String },
    #[error("{}: {source}", path.display())]
    Trace {
        path: PathBuf,
        #[source]
        source: adversarial_examiner::exam::TraceParseError,
    },
    #[error(transparent)]
    Core(#[from] adversarial_examiner::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Process exit code: 2 for usage and configuration problems, 1 for
    /// failures during a run.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::CannotWrite { .. } => 2,
            Self::Core(adversarial_examiner::Error::InvalidConfig(_)) => 2,
            _ => 1,
        }
    }
}
