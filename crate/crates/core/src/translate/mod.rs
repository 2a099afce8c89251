//! Weak translation of English questions through a pluggable backend, with
//! a persistent, append-only translation cache.

mod cache;
mod mock;
mod remote;
pub mod stub;

use std::collections::BTreeMap;

use thiserror::Error;

pub use cache::TranslationCache;
pub use mock::{mock_translate, pseudo_transliterate, MockTranslator};
pub use remote::{RemoteConfig, RemoteTranslator};

use crate::corpus::is_valid_language_code;

#[derive(Debug, Error)]
pub enum TranslateError {
    #[error("invalid request: {0}")]
    Validation(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("cache i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranslationRequest {
    pub text: String,
    pub source: String,
    pub target: String,
}

impl TranslationRequest {
    pub fn new(text: impl Into<String>, source: &str, target: &str) -> Result<Self, TranslateError> {
        let r = Self { text: text.into(), source: source.to_string(), target: target.to_string() };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), TranslateError> {
        if self.text.trim().is_empty() {
            return Err(TranslateError::Validation("empty text".into()));
        }
        for code in [&self.source, &self.target] {
            if !is_valid_language_code(code) {
                return Err(TranslateError::Validation(format!("invalid language code {code:?}")));
            }
        }
        if self.source == self.target {
            return Err(TranslateError::Validation(format!("source and target are both {:?}", self.source)));
        }
        Ok(())
    }
}

/// A translation service. Implementations must tolerate concurrent calls.
pub trait TranslatorBackend: Send + Sync {
    /// Translates `texts` from `source` to `target`, one output per input,
    /// in order.
    fn translate(&self, texts: &[String], source: &str, target: &str) -> Result<Vec<String>, TranslateError>;

    /// Short description recorded in run manifests.
    fn describe(&self) -> String;
}

/// Translates every request, serving repeats from `cache` and sending one
/// backend call per (source, target) pair for the misses. Output order
/// follows the input.
pub fn translate_batch(
    requests: &[TranslationRequest],
    backend: &dyn TranslatorBackend,
    cache: &TranslationCache,
) -> Result<Vec<String>, TranslateError> {
    if requests.is_empty() {
        return Err(TranslateError::Validation("empty batch".into()));
    }
    for r in requests {
        r.validate()?;
    }
    let mut out: Vec<Option<String>> = vec![None; requests.len()];
    // pair -> (distinct texts, positions waiting on each)
    let mut pending: BTreeMap<(&str, &str), (Vec<String>, Vec<Vec<usize>>)> = BTreeMap::new();
    for (i, r) in requests.iter().enumerate() {
        if let Some(hit) = cache.get(&r.source, &r.target, &r.text) {
            out[i] = Some(hit);
            continue;
        }
        let (texts, slots) = pending.entry((&r.source, &r.target)).or_default();
        match texts.iter().position(|t| *t == r.text) {
            Some(j) => slots[j].push(i),
            None => {
                texts.push(r.text.clone());
                slots.push(vec![i]);
            }
        }
    }
    for ((source, target), (texts, slots)) in pending {
        let translated = backend.translate(&texts, source, target)?;
        if translated.len() != texts.len() {
            return Err(TranslateError::Protocol(format!(
                "backend returned {} translations for {} inputs",
                translated.len(),
                texts.len()
            )));
        }
        for ((text, t), positions) in texts.iter().zip(translated).zip(slots) {
            cache.insert(source, target, text, &t)?;
            for p in positions {
                out[p] = Some(t.clone());
            }
        }
    }
    Ok(out.into_iter().map(|t| t.expect("every slot filled")).collect())
}
