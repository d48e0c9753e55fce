use std::path::PathBuf;

use thiserror::Error;

use svip_core::bounds::BoundsError;
use svip_core::engine::EngineError;
use svip_core::harness::HarnessError;
use svip_core::models::ModelError;
use svip_core::policies::PolicyError;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{path}: line {line}: {reason}")]
    TokenFile { path: PathBuf, line: usize, reason: String },
    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("{0}")]
    Harness(#[from] HarnessError),
    #[error("decode: {0}")]
    Engine(#[from] EngineError),
    #[error("bounds: {0}")]
    Bounds(#[from] BoundsError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl LabError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        LabError::Config { field: field.into(), reason: reason.into() }
    }

    /// Process exit status: 1 for anything detectable before computing,
    /// 2 for failures during a run.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Read { .. }
            | LabError::Parse { .. }
            | LabError::TokenFile { .. }
            | LabError::Config { .. }
            | LabError::Model(_)
            | LabError::Policy(_) => 1,
            LabError::Harness(HarnessError::InvalidConfig { .. } | HarnessError::StateSpaceTooLarge { .. }) => 1,
            LabError::Harness(HarnessError::Policy(_)) => 1,
            _ => 2,
        }
    }
}
