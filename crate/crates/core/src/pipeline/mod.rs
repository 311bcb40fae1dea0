//! Corpus ingestion, dataset splitting and stage orchestration over a
//! workspace directory.

pub mod config;
pub mod fixture;
pub mod labels;
pub mod split;
pub mod stages;
pub mod store;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

pub use config::PipelineConfig;
pub use split::{family_split, Assignment, FamilySplit};
pub use stages::{run, StageArgs, StageSummary, Workspace};
pub use store::{ingest, Store, StoredContract};

use crate::model::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Extract,
    Train,
    Score,
    Queues,
    Transfer,
    Enrich,
    Reuse,
    Align,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Ingest,
        Stage::Extract,
        Stage::Train,
        Stage::Score,
        Stage::Queues,
        Stage::Transfer,
        Stage::Enrich,
        Stage::Reuse,
        Stage::Align,
        Stage::Report,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Extract => "extract",
            Stage::Train => "train",
            Stage::Score => "score",
            Stage::Queues => "queues",
            Stage::Transfer => "transfer",
            Stage::Enrich => "enrich",
            Stage::Reuse => "reuse",
            Stage::Align => "align",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .iter()
            .find(|st| st.as_str() == s)
            .copied()
            .ok_or_else(|| format!("unknown stage '{s}'"))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Validation(String),
    #[error("{malformed} of {rows} rows malformed; aborting")]
    AbortThresholdExceeded { malformed: usize, rows: usize },
    #[error("missing artifact {artifact}; run the '{stage}' stage first")]
    StageDependency { stage: Stage, artifact: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io { path: path.to_path_buf(), source }
    }

    /// 2 for invalid input, 3 for a missing upstream stage, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) | PipelineError::AbortThresholdExceeded { .. } => 2,
            PipelineError::StageDependency { .. } => 3,
            PipelineError::Model(ModelError::Shape(_)) => 2,
            PipelineError::Io { .. } | PipelineError::Model(_) => 1,
        }
    }
}

/// Write through a temporary sibling and rename into place.
pub(crate) fn write_atomic(path: &Path, data: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, data).map_err(|e| PipelineError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.as_str().parse::<Stage>().unwrap(), s);
        }
        assert!("deploy".parse::<Stage>().is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Validation("x".into()).exit_code(), 2);
        let e = PipelineError::StageDependency { stage: Stage::Train, artifact: "model/checkpoint.json".into() };
        assert_eq!(e.exit_code(), 3);
        assert!(e.to_string().contains("train"));
    }
}
