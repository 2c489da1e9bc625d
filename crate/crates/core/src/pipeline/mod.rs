//! Dataset files, grouped fold splitting, and the raw-vs-interpolated
//! cross-validation experiment.

mod experiment;
mod folds;
mod io;

use thiserror::Error;

pub use experiment::{
    compare_summaries, prepare_scans, run_experiment, run_experiment_with, write_report, UnitTiming, ComparisonReport, ExperimentConfig,
    LstmTrainer, OracleTrainer, RelativeChange, StageTimings, TargetMode, Trained, Trainer, UnitTraining,
};
pub use folds::{assign_scans, build_learning_set, split_folds, FoldSplit, LearningSet};
pub use io::{read_dataset, read_json, read_scan_csv, write_dataset, write_json, write_scan_csv, ManifestEntry, Manifest};

use crate::evalkit::EvalError;
use crate::fit::FitError;
use crate::kinetics::KineticsError;
use crate::seqnet::SeqnetError;
use crate::tac::TacError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("need at least {k} rodents for {k} folds, got {n}")]
    TooFewRodents { n: usize, k: usize },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed input {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tac(#[from] TacError),
    #[error(transparent)]
    Kinetics(#[from] KineticsError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Seqnet(#[from] SeqnetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<PipelineError>,
    },
}

impl PipelineError {
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        PipelineError::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// Bad input or configuration, as opposed to a failure while running.
    pub fn is_validation(&self) -> bool {
        match self {
            PipelineError::Stage { source, .. } => source.is_validation(),
            PipelineError::Io { .. } | PipelineError::Eval(EvalError::IoFailure(_)) => false,
            PipelineError::Seqnet(SeqnetError::StaleCache) => false,
            _ => true,
        }
    }
}

pub(crate) fn io_error(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}
