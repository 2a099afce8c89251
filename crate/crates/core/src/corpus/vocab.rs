use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{CorpusError, Dataset, QAExample, Split};
use crate::evaluate::normalize_answer;

/// Closed English answer set; the discriminative output space.
///
/// Ordered by training-split frequency, descending, ties lexicographic.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AnswerVocabulary {
    answers: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    /// Fraction of training answer occurrences covered.
    coverage: f64,
}

impl PartialEq for AnswerVocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.answers == other.answers && self.coverage == other.coverage
    }
}

impl AnswerVocabulary {
    /// Builds from an explicit ordered answer list (normalized on the way in).
    pub fn from_answers(answers: Vec<String>) -> Result<Self, CorpusError> {
        let answers: Vec<String> = answers.iter().map(|a| normalize_answer(a)).collect();
        let mut index = HashMap::with_capacity(answers.len());
        for (i, a) in answers.iter().enumerate() {
            if index.insert(a.clone(), i).is_some() {
                return Err(CorpusError::Validation(format!("duplicate vocabulary answer {a:?}")));
            }
        }
        Ok(Self { answers, index, coverage: 1.0 })
    }

    pub(crate) fn from_examples(examples: &[QAExample], k: Option<usize>) -> Result<Self, CorpusError> {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut total = 0usize;
        for e in examples.iter().filter(|e| e.split == Split::Train) {
            for a in &e.answers {
                *counts.entry(normalize_answer(a)).or_default() += 1;
                total += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        // BTreeMap order is lexicographic, so a stable sort on count keeps ties ordered
        ranked.sort_by(|a, b| b.1.cmp(&a.1));
        if let Some(k) = k {
            ranked.truncate(k);
        }
        let covered: usize = ranked.iter().map(|(_, n)| n).sum();
        let answers: Vec<String> = ranked.into_iter().map(|(a, _)| a).collect();
        let index = answers.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        let coverage = if total == 0 { 1.0 } else { covered as f64 / total as f64 };
        Ok(Self { answers, index, coverage })
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }

    pub fn coverage(&self) -> f64 {
        self.coverage
    }

    /// Index of an answer; the argument is normalized first.
    pub fn index_of(&self, answer: &str) -> Option<usize> {
        self.index.get(&normalize_answer(answer)).copied()
    }

    pub fn answer(&self, index: usize) -> Option<&str> {
        self.answers.get(index).map(String::as_str)
    }

    /// Restores the lookup map after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.answers.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
    }
}

/// Top-`k` training answers with the coverage they achieve.
pub fn build_answer_vocab(dataset: &Dataset, k: usize) -> Result<AnswerVocabulary, CorpusError> {
    if k == 0 {
        return Err(CorpusError::InvalidArgument("vocabulary size must be positive".into()));
    }
    if dataset.split(Split::Train).next().is_none() {
        return Err(CorpusError::InvalidInput("training split is empty".into()));
    }
    AnswerVocabulary::from_examples(&dataset.examples, Some(k))
}
