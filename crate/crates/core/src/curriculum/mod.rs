//! The source → source⊕target → target curriculum: finetune on English,
//! translate, weakly label the translations from concatenated prompts,
//! keep the most confident labels and finetune again.

mod config;
mod run;
mod stages;

use thiserror::Error;

pub use config::{
    AugmentMode, ConcatOrder, CurriculumConfig, EvalConfig, ModelConfig, RestartMode, Selection, TrainConfig,
    TranslatorConfig, TranslatorKind, DEFAULT_SELECT_FRAC,
};
pub use run::{
    load_manifest, read_jsonl, run_curriculum, write_jsonl, Metrics, OpenMode, ProgressEvent, ProgressStatus, Run,
    RunManifest, RunStatus, StageRecord, TrainingSet, TranslationRecord, MANIFEST_VERSION,
};
pub use stages::{build_concat_prompt, select_high_confidence, weak_annotate, WeakLabel};

use crate::corpus::CorpusError;
use crate::evaluate::EvalError;
use crate::langmix::LangmixError;
use crate::model::ModelError;
use crate::translate::TranslateError;

#[derive(Debug, Error)]
pub enum CurriculumError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("missing artifact {0}; run the stage that produces it first")]
    MissingArtifact(String),
    #[error("run directory is locked: {0}")]
    Locked(String),
    #[error("validation: {0}")]
    Validation(String),
    #[error("stage {stage} failed: {source}")]
    StageFailed {
        stage: String,
        #[source]
        source: Box<CurriculumError>,
    },
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Translate(#[from] TranslateError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Langmix(#[from] LangmixError),
}

impl CurriculumError {
    /// Usage and configuration problems, as opposed to runtime failures.
    pub fn is_usage(&self) -> bool {
        match self {
            CurriculumError::Config(_) | CurriculumError::MissingArtifact(_) => true,
            CurriculumError::StageFailed { source, .. } => source.is_usage(),
            _ => false,
        }
    }
}
