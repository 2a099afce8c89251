//! Curriculum script distillation for cross-lingual visual question answering.
//!
//! A model finetuned on English-labelled VQA data is transferred to a target
//! language in five steps: finetune on English, translate the English
//! questions, label the translations with the English model while priming it
//! with the source question, keep the most confident labels, and finetune
//! again on the union. The crate also ships the script-aware evaluation
//! harness (VQA accuracy, Roman/non-Roman and code-switch gaps), a synthetic
//! shapes-and-colors corpus for desk-scale runs, and the `scd` CLI.
//!
//! Model arithmetic is generic over [`Scalar`] (`f32` or `f64`); the
//! pipeline itself runs in `f64` through the aliases below.

pub mod cli;
pub mod corpus;
pub mod curriculum;
pub mod evaluate;
pub mod langmix;
pub mod model;
pub mod scalar;
pub mod translate;
pub mod util;

pub use scalar::Scalar;

pub use corpus::{detect_script, AnswerVocabulary, Dataset, QAExample, ScriptTag, Split};

pub use evaluate::{normalize_answer, vqa_accuracy};


pub use curriculum::{run_curriculum, CurriculumConfig, RunManifest, WeakLabel};
pub use evaluate::EvalReport;
pub use model::{Arch, Dims, Prediction};

pub type Checkpoint = model::AnswererCheckpoint<f64>;
pub type Checkpoint32 = model::AnswererCheckpoint<f32>;
pub type Gradients = model::Gradients<f64>;
