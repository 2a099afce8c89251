//! Code-switched question generation under a matrix-language frame, and
//! romanization of non-Roman tokens.
//!
//! English is always the matrix language: word order, function words and
//! punctuation are kept verbatim and only content words (by lexicon part of
//! speech) are replaced by their embedded-language translation.

mod lexicon;
mod translit;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lexicon::{BilingualLexicon, LexEntry, Pos};
pub use translit::TransliterationTable;

use crate::corpus::{detect_script, id_stem, CorpusError, Dataset, QAExample, ScriptTag};
use crate::util::derive_seed;

#[derive(Debug, Error)]
pub enum LangmixError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("no switch possible in {0:?}")]
    NoSwitchPossible(String),
    #[error("no transliteration rule for {grapheme:?} at offset {offset}")]
    Coverage { grapheme: char, offset: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Which content words to swap, and how often.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchPolicy {
    pub pos: Vec<Pos>,
    pub p_swap: f64,
    pub seed: u64,
}

impl Default for SwitchPolicy {
    fn default() -> Self {
        Self { pos: vec![Pos::Noun, Pos::Adjective], p_swap: 1.0, seed: 0 }
    }
}

/// Byte ranges of word cores: whitespace-separated tokens with leading and
/// trailing ASCII punctuation excluded.
pub fn word_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    let push = |spans: &mut Vec<(usize, usize)>, s: usize, e: usize| {
        let tok = &text[s..e];
        let lead = tok.len() - tok.trim_start_matches(|c: char| c.is_ascii_punctuation()).len();
        let core_end = tok.trim_end_matches(|c: char| c.is_ascii_punctuation()).len();
        if lead < core_end {
            spans.push((s + lead, s + core_end));
        }
    };
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                push(&mut spans, s, i);
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        push(&mut spans, s, text.len());
    }
    spans
}

/// Replaces selected content words of an English question by their
/// embedded-language translation. At least one word is always swapped:
/// when the random draw selects none, one candidate is chosen uniformly.
pub fn code_switch(question_en: &str, lexicon: &BilingualLexicon, policy: &SwitchPolicy) -> Result<String, LangmixError> {
    if lexicon.is_empty() {
        return Err(LangmixError::InvalidArgument("empty lexicon".into()));
    }
    if !(policy.p_swap > 0.0 && policy.p_swap <= 1.0) {
        return Err(LangmixError::InvalidArgument(format!("p_swap {} outside (0, 1]", policy.p_swap)));
    }
    match detect_script(question_en) {
        Ok(ScriptTag::Roman) => {}
        Ok(other) => {
            return Err(LangmixError::InvalidMatrix(format!("matrix question must be Roman script, got {other}")))
        }
        Err(e) => return Err(LangmixError::InvalidMatrix(e.to_string())),
    }
    let candidates: Vec<((usize, usize), &str)> = word_spans(question_en)
        .into_iter()
        .filter_map(|(s, e)| {
            let entry = lexicon.get(&question_en[s..e].to_lowercase())?;
            policy.pos.contains(&entry.pos).then_some(((s, e), entry.target.as_str()))
        })
        .collect();
    if candidates.is_empty() {
        return Err(LangmixError::NoSwitchPossible(question_en.to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let mut chosen: Vec<bool> = candidates.iter().map(|_| rng.random::<f64>() < policy.p_swap).collect();
    if !chosen.iter().any(|&c| c) {
        let i = rng.random_range(0..candidates.len());
        chosen[i] = true;
    }
    let mut out = String::with_capacity(question_en.len() * 2);
    let mut cursor = 0;
    for (((s, e), target), pick) in candidates.iter().zip(chosen) {
        if pick {
            out.push_str(&question_en[cursor..*s]);
            out.push_str(target);
            cursor = *e;
        }
    }
    out.push_str(&question_en[cursor..]);
    Ok(out)
}

/// Rewrites every non-Roman grapheme cluster with the table, longest match
/// first; everything else is copied. Uncovered graphemes are an error.
pub fn romanize(text: &str, table: &TransliterationTable) -> Result<String, LangmixError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if !translit::needs_rule(c) {
            out.push(c);
            i += 1;
            continue;
        }
        match table.match_at(&chars, i) {
            Some((len, roman)) => {
                out.push_str(roman);
                i += len;
            }
            None => return Err(LangmixError::Coverage { grapheme: c, offset: i }),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct CodeMixedSplit {
    pub dataset: Dataset,
    /// English examples with no swappable word.
    pub excluded: usize,
}

/// Code-switched counterpart of every English example, tagged `<target>-en`,
/// with answers and image ids copied. The per-example switch seed is derived
/// from `policy.seed` and the example id stem.
pub fn build_code_mixed_split(
    dataset: &Dataset,
    lexicon: &BilingualLexicon,
    table: Option<&TransliterationTable>,
    policy: &SwitchPolicy,
) -> Result<CodeMixedSplit, LangmixError> {
    let language = format!("{}-en", lexicon.target);
    let mut examples = Vec::new();
    let mut excluded = 0;
    let sources: Vec<&QAExample> = dataset.examples.iter().filter(|e| e.language == lexicon.source).collect();
    if sources.is_empty() {
        return Err(LangmixError::InvalidArgument(format!("dataset has no {} examples", lexicon.source)));
    }
    for ex in sources {
        let stem = id_stem(&ex.example_id);
        let p = SwitchPolicy { seed: derive_seed(policy.seed, stem), ..policy.clone() };
        let switched = match code_switch(&ex.question, lexicon, &p) {
            Ok(q) => q,
            Err(LangmixError::NoSwitchPossible(_)) => {
                excluded += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let question = match table {
            Some(t) => romanize(&switched, t)?,
            None => switched,
        };
        examples.push(QAExample {
            example_id: format!("{stem}.{language}"),
            image_id: ex.image_id.clone(),
            script: detect_script(&question)?,
            question,
            language: language.clone(),
            answers: ex.answers.clone(),
            split: ex.split,
            meta: ex.meta.clone(),
        });
    }
    let source = format!("{}+codemix:{language}", dataset.provenance.source);
    let dataset = Dataset::new(examples, dataset.features.clone(), source)?;
    Ok(CodeMixedSplit { dataset, excluded })
}
