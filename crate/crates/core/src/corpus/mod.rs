//! Dataset model, JSONL ingestion, answer vocabulary and the synthetic
//! shapes-and-colors corpus.

mod io;
mod script;
mod synth;
mod vocab;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{load_dataset, load_dataset_with, read_unlabeled_pool, save_dataset, LoadOptions};
pub use script::{block_of, detect_script, is_latin, is_letter, Block, ScriptTag};
pub use synth::{
    generate_synthetic_corpus, question_for_template, LanguageSpec, Scene, SplitFractions,
    SyntheticConfig,
};
pub use vocab::{build_answer_vocab, AnswerVocabulary};

use crate::evaluate::{normalize_answer, ANNOTATORS};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}:{line}: parse error: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("referential integrity: {0}")]
    Referential(String),
    #[error("validation: {0}")]
    Validation(String),
    #[error("generation: {0}")]
    Generation(String),
    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(CorpusError::InvalidInput(format!("unknown split {other:?}"))),
        }
    }
}

/// `xx` for a monolingual question, `xx-en` for one code-mixed with English.
pub fn is_valid_language_code(code: &str) -> bool {
    let base = code.strip_suffix("-en").unwrap_or(code);
    base.len() == 2 && base.bytes().all(|b| b.is_ascii_lowercase())
}

pub fn is_code_mixed(code: &str) -> bool {
    code.len() == 5 && code.ends_with("-en")
}

/// The part of an example id before the last `.`, shared by all parallel
/// renderings of one question.
pub fn id_stem(example_id: &str) -> &str {
    example_id.rsplit_once('.').map_or(example_id, |(stem, _)| stem)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleMeta {
    /// Annotator slots filled by repeating the majority answer at load time.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub padded_answers: usize,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

impl ExampleMeta {
    pub fn is_empty(&self) -> bool {
        self.padded_answers == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QAExample {
    pub example_id: String,
    pub image_id: String,
    pub question: String,
    pub language: String,
    pub script: ScriptTag,
    pub answers: Vec<String>,
    pub split: Split,
    pub meta: ExampleMeta,
}

impl QAExample {
    /// Most frequent normalized answer; ties go to the lexicographically
    /// smallest.
    pub fn modal_answer(&self) -> String {
        modal_answer(&self.answers)
    }
}

pub fn modal_answer(answers: &[String]) -> String {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for a in answers {
        *counts.entry(normalize_answer(a)).or_default() += 1;
    }
    let mut best: Option<(&String, usize)> = None;
    for (a, &n) in &counts {
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((a, n));
        }
    }
    best.map(|(a, _)| a.clone()).unwrap_or_default()
}

/// Pads an answer list to ten by repeating its majority answer. Returns the
/// number of slots added.
pub fn pad_answers(answers: &mut Vec<String>) -> usize {
    if answers.is_empty() || answers.len() >= ANNOTATORS {
        return 0;
    }
    let majority = majority_raw(answers);
    let added = ANNOTATORS - answers.len();
    answers.extend(std::iter::repeat_n(majority, added));
    added
}

// majority over the raw strings, with the normalized mode deciding
fn majority_raw(answers: &[String]) -> String {
    let mode = modal_answer(answers);
    answers
        .iter()
        .find(|a| normalize_answer(a) == mode)
        .cloned()
        .unwrap_or(mode)
}

/// Dense image features keyed by image id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageFeatureStore {
    dim: usize,
    features: BTreeMap<String, Vec<f64>>,
}

impl ImageFeatureStore {
    pub fn new(dim: usize) -> Result<Self, CorpusError> {
        if dim == 0 {
            return Err(CorpusError::InvalidArgument("feature dimension must be positive".into()));
        }
        Ok(Self { dim, features: BTreeMap::new() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn insert(&mut self, image_id: String, feature: Vec<f64>) -> Result<(), CorpusError> {
        if feature.len() != self.dim {
            return Err(CorpusError::Validation(format!(
                "feature for {image_id} has dimension {}, expected {}",
                feature.len(),
                self.dim
            )));
        }
        if feature.iter().any(|v| !v.is_finite()) {
            return Err(CorpusError::Validation(format!("feature for {image_id} is not finite")));
        }
        if self.features.insert(image_id.clone(), feature).is_some() {
            return Err(CorpusError::Referential(format!("duplicate image_id {image_id}")));
        }
        Ok(())
    }

    pub fn get(&self, image_id: &str) -> Option<&[f64]> {
        self.features.get(image_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<f64>)> {
        self.features.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub content_hash: String,
}

/// A validated set of examples plus the features they reference.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub examples: Vec<QAExample>,
    pub features: ImageFeatureStore,
    pub vocab: AnswerVocabulary,
    pub provenance: Provenance,
    /// Unlabelled question pool. Accepted and hashed into run manifests; no
    /// pipeline stage consumes it.
    pub unlabeled: Vec<String>,
    pub warnings: Vec<String>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.examples == other.examples
            && self.features == other.features
            && self.vocab == other.vocab
            && self.unlabeled == other.unlabeled
    }
}

impl Dataset {
    /// Validates examples against features and builds the full training
    /// vocabulary (every distinct training answer).
    pub fn new(
        examples: Vec<QAExample>,
        features: ImageFeatureStore,
        source: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        validate(&examples, &features)?;
        let vocab = AnswerVocabulary::from_examples(&examples, None)?;
        let mut ds = Self {
            examples,
            features,
            vocab,
            provenance: Provenance { source: source.into(), content_hash: String::new() },
            unlabeled: Vec::new(),
            warnings: Vec::new(),
        };
        ds.provenance.content_hash = ds.content_hash();
        Ok(ds)
    }

    /// SHA-256 over the canonical dataset and feature serializations.
    pub fn content_hash(&self) -> String {
        let (d, f) = io::serialize(self);
        let mut bytes = d.into_bytes();
        bytes.push(0);
        bytes.extend_from_slice(f.as_bytes());
        crate::util::sha256_hex(&bytes)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &QAExample> {
        self.examples.iter().filter(move |e| e.split == split)
    }

    pub fn select(&self, language: &str, split: Split) -> Vec<&QAExample> {
        self.examples
            .iter()
            .filter(|e| e.split == split && e.language == language)
            .collect()
    }

    pub fn languages(&self) -> Vec<String> {
        let mut langs: Vec<String> = self.examples.iter().map(|e| e.language.clone()).collect();
        langs.sort();
        langs.dedup();
        langs
    }

    pub fn feature(&self, image_id: &str) -> Option<&[f64]> {
        self.features.get(image_id)
    }

    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut m = BTreeMap::new();
        for e in &self.examples {
            *m.entry(e.split).or_default() += 1;
        }
        m
    }

    /// Appends the examples of `other`, which must reference the same
    /// feature store. The vocabulary is rebuilt.
    pub fn merge(&self, other: &Dataset) -> Result<Dataset, CorpusError> {
        if self.features != other.features {
            return Err(CorpusError::Referential("merged datasets must share image features".into()));
        }
        let mut examples = self.examples.clone();
        examples.extend(other.examples.iter().cloned());
        let mut ds = Dataset::new(examples, self.features.clone(), self.provenance.source.clone())?;
        ds.unlabeled = self.unlabeled.clone();
        ds.warnings = self.warnings.iter().chain(&other.warnings).cloned().collect();
        Ok(ds)
    }
}

fn validate(examples: &[QAExample], features: &ImageFeatureStore) -> Result<(), CorpusError> {
    let mut seen = HashSet::new();
    for e in examples {
        if !seen.insert(e.example_id.as_str()) {
            return Err(CorpusError::Referential(format!("duplicate example_id {}", e.example_id)));
        }
        if features.get(&e.image_id).is_none() {
            return Err(CorpusError::Referential(format!(
                "example {} references missing image feature {}",
                e.example_id, e.image_id
            )));
        }
        if e.answers.len() != ANNOTATORS {
            return Err(CorpusError::Validation(format!(
                "example {} has {} answers, expected {ANNOTATORS}",
                e.example_id,
                e.answers.len()
            )));
        }
        if !is_valid_language_code(&e.language) {
            return Err(CorpusError::Validation(format!(
                "example {} has malformed language code {:?}",
                e.example_id, e.language
            )));
        }
        let detected = detect_script(&e.question)?;
        if detected != e.script {
            return Err(CorpusError::Validation(format!(
                "example {} is tagged {} but its question is {detected}",
                e.example_id, e.script
            )));
        }
    }
    Ok(())
}
