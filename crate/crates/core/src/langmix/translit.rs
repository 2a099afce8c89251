use std::collections::HashMap;
use std::path::Path;

use super::LangmixError;
use crate::corpus::{block_of, Block};

/// Grapheme-cluster → Roman rules for one script, applied longest match first.
///
/// A rule whose grapheme ends in `$` only matches at the end of a word, which
/// is how inherent-vowel deletion is written (`स$ → s` next to `स → sa`).
/// For equal match lengths the word-final rule wins where it applies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransliterationTable {
    block: Block,
    rules: HashMap<String, String>,
    final_rules: HashMap<String, String>,
    max_len: usize,
}

const BUILTIN: &[(&str, &str)] = &[
    ("devanagari", include_str!("../../data/translit/devanagari.tsv")),
    ("bengali", include_str!("../../data/translit/bengali.tsv")),
];

impl TransliterationTable {
    pub fn from_rules<'a>(rules: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, LangmixError> {
        let mut t = Self { block: Block::Other, rules: HashMap::new(), final_rules: HashMap::new(), max_len: 0 };
        let mut block: Option<Block> = None;
        for (grapheme, roman) in rules {
            let (key, word_final) = match grapheme.strip_suffix('$') {
                Some(k) if !k.is_empty() => (k, true),
                _ => (grapheme, false),
            };
            if key.is_empty() {
                return Err(LangmixError::InvalidArgument("empty grapheme in transliteration table".into()));
            }
            for c in key.chars() {
                let b = block_of(c);
                if b == Block::Latin {
                    return Err(LangmixError::InvalidArgument(format!("rule {grapheme:?} rewrites Roman text")));
                }
                match block {
                    None => block = Some(b),
                    Some(prev) if prev != b => {
                        return Err(LangmixError::InvalidArgument(format!(
                            "rule {grapheme:?} mixes scripts; one table covers one script"
                        )))
                    }
                    _ => {}
                }
            }
            let map = if word_final { &mut t.final_rules } else { &mut t.rules };
            if let Some(prev) = map.insert(key.to_string(), roman.to_string()) {
                if prev != roman {
                    return Err(LangmixError::InvalidArgument(format!(
                        "conflicting rules for {grapheme:?}: {prev:?} and {roman:?}"
                    )));
                }
            }
            t.max_len = t.max_len.max(key.chars().count());
        }
        t.block = block.ok_or_else(|| LangmixError::InvalidArgument("empty transliteration table".into()))?;
        Ok(t)
    }

    /// Parses the `grapheme\troman` TSV format (`#` comments, optional header).
    pub fn from_tsv(text: &str) -> Result<Self, LangmixError> {
        let mut rows = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 2 {
                return Err(LangmixError::Parse { line: i + 1, message: format!("expected 2 columns, got {}", cols.len()) });
            }
            if cols == ["grapheme", "roman"] {
                continue;
            }
            rows.push((cols[0], cols[1]));
        }
        Self::from_rules(rows)
    }

    pub fn from_file(path: &Path) -> Result<Self, LangmixError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LangmixError::Io(format!("{}: {e}", path.display())))?;
        Self::from_tsv(&text)
    }

    /// `devanagari` or `bengali` starter tables.
    pub fn builtin(name: &str) -> Result<Self, LangmixError> {
        let (_, text) = BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| LangmixError::InvalidArgument(format!("no builtin table {name:?}")))?;
        Self::from_tsv(text)
    }

    pub fn resolve(spec: &str, base: Option<&Path>) -> Result<Self, LangmixError> {
        if let Some(name) = spec.strip_prefix("builtin:") {
            return Self::builtin(name);
        }
        let path = match base {
            Some(b) if Path::new(spec).is_relative() => b.join(spec),
            _ => Path::new(spec).to_path_buf(),
        };
        Self::from_file(&path)
    }

    pub fn block(&self) -> Block {
        self.block
    }

    /// Longest rule matching `chars[at..]`: (consumed chars, output).
    pub(crate) fn match_at(&self, chars: &[char], at: usize) -> Option<(usize, &str)> {
        let longest = self.max_len.min(chars.len() - at);
        for len in (1..=longest).rev() {
            let key: String = chars[at..at + len].iter().collect();
            let word_end = chars.get(at + len).is_none_or(|&c| !continues_word(c));
            if word_end {
                if let Some(out) = self.final_rules.get(&key) {
                    return Some((len, out));
                }
            }
            if let Some(out) = self.rules.get(&key) {
                return Some((len, out));
            }
        }
        None
    }
}

// letters, vowel signs and viramas extend a word; punctuation, digits and
// whitespace end it
fn continues_word(c: char) -> bool {
    if c.is_alphabetic() {
        return true;
    }
    matches!(block_of(c), Block::Devanagari | Block::Bengali) && is_indic_mark(c)
}

fn is_indic_mark(c: char) -> bool {
    let u = c as u32;
    // virama, nukta and the combining ranges of the two blocks
    matches!(u, 0x0900..=0x0903 | 0x093A..=0x094F | 0x0951..=0x0957 | 0x0962 | 0x0963
        | 0x0981..=0x0983 | 0x09BC | 0x09BE..=0x09CD | 0x09D7 | 0x09E2 | 0x09E3)
}

/// Characters that must be covered by a table when romanizing: anything
/// from a non-Latin script block, plus non-Latin letters elsewhere.
pub(crate) fn needs_rule(c: char) -> bool {
    match block_of(c) {
        Block::Latin => false,
        Block::Devanagari | Block::Bengali => true,
        Block::Other => c.is_alphabetic(),
    }
}
