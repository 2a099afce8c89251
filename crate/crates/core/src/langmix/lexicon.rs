use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::LangmixError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pos {
    Noun,
    Adjective,
    Verb,
    Other,
}

impl FromStr for Pos {
    type Err = LangmixError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "noun" => Ok(Pos::Noun),
            "adjective" => Ok(Pos::Adjective),
            "verb" => Ok(Pos::Verb),
            "other" => Ok(Pos::Other),
            other => Err(LangmixError::InvalidArgument(format!("unknown part of speech {other:?}"))),
        }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pos::Noun => "noun",
            Pos::Adjective => "adjective",
            Pos::Verb => "verb",
            Pos::Other => "other",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexEntry {
    pub target: String,
    pub pos: Pos,
}

/// Word-level source → target lexicon with a part-of-speech tag per entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BilingualLexicon {
    pub source: String,
    pub target: String,
    entries: BTreeMap<String, LexEntry>,
}

const BUILTIN: &[(&str, &str)] = &[
    ("en-hi", include_str!("../../data/lexicons/en-hi.tsv")),
    ("en-hl", include_str!("../../data/lexicons/en-hl.tsv")),
    ("en-bn", include_str!("../../data/lexicons/en-bn.tsv")),
];

impl BilingualLexicon {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        Self { source: source.into(), target: target.into(), entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, word: &str, target: &str, pos: Pos) -> Result<(), LangmixError> {
        if word.is_empty() || word.chars().any(char::is_whitespace) || word.to_lowercase() != word {
            return Err(LangmixError::InvalidArgument(format!(
                "lexicon key {word:?} must be a single lowercase token"
            )));
        }
        if target.trim().is_empty() {
            return Err(LangmixError::InvalidArgument(format!("empty translation for {word:?}")));
        }
        self.entries.insert(word.to_string(), LexEntry { target: target.to_string(), pos });
        Ok(())
    }

    /// Parses the `source\ttarget\tpos` TSV format. `#` lines are comments,
    /// an optional `source\ttarget\tpos` header row is skipped.
    pub fn from_tsv(text: &str, source: &str, target: &str) -> Result<Self, LangmixError> {
        let mut lex = Self::new(source, target);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(LangmixError::Parse { line: i + 1, message: format!("expected 3 columns, got {}", cols.len()) });
            }
            if cols == ["source", "target", "pos"] {
                continue;
            }
            let pos = cols[2].parse().map_err(|e: LangmixError| LangmixError::Parse { line: i + 1, message: e.to_string() })?;
            lex.insert(cols[0], cols[1], pos)
                .map_err(|e| LangmixError::Parse { line: i + 1, message: e.to_string() })?;
        }
        Ok(lex)
    }

    pub fn from_file(path: &Path, source: &str, target: &str) -> Result<Self, LangmixError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LangmixError::Io(format!("{}: {e}", path.display())))?;
        Self::from_tsv(&text, source, target)
    }

    /// Bundled pseudo-language lexicons: `en-hi` (Devanagari), `en-hl` (the
    /// same words in Roman spelling), `en-bn` (Bengali).
    pub fn builtin(name: &str) -> Result<Self, LangmixError> {
        let (_, text) = BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| LangmixError::InvalidArgument(format!("no builtin lexicon {name:?}")))?;
        let (source, target) = name.split_once('-').expect("builtin names are src-tgt");
        Self::from_tsv(text, source, target)
    }

    /// Loads `builtin:<name>` or a TSV path.
    pub fn resolve(spec: &str, source: &str, target: &str, base: Option<&Path>) -> Result<Self, LangmixError> {
        if let Some(name) = spec.strip_prefix("builtin:") {
            let mut lex = Self::builtin(name)?;
            lex.source = source.to_string();
            lex.target = target.to_string();
            return Ok(lex);
        }
        let path = match base {
            Some(b) if Path::new(spec).is_relative() => b.join(spec),
            _ => Path::new(spec).to_path_buf(),
        };
        Self::from_file(&path, source, target)
    }

    pub fn get(&self, word: &str) -> Option<&LexEntry> {
        self.entries.get(word)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &LexEntry)> {
        self.entries.iter()
    }
}
