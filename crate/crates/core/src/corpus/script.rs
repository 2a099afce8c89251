use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Script class of a question, decided from its letters only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScriptTag {
    Roman,
    Devanagari,
    Bengali,
    Mixed,
    Other,
}

impl ScriptTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ScriptTag::Roman => "Roman",
            ScriptTag::Devanagari => "Devanagari",
            ScriptTag::Bengali => "Bengali",
            ScriptTag::Mixed => "Mixed",
            ScriptTag::Other => "Other",
        }
    }
}

impl fmt::Display for ScriptTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScriptTag {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Roman" => Ok(ScriptTag::Roman),
            "Devanagari" => Ok(ScriptTag::Devanagari),
            "Bengali" => Ok(ScriptTag::Bengali),
            "Mixed" => Ok(ScriptTag::Mixed),
            "Other" => Ok(ScriptTag::Other),
            other => Err(CorpusError::InvalidInput(format!("unknown script tag {other:?}"))),
        }
    }
}

/// Unicode block class of a single character.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Latin,
    Devanagari,
    Bengali,
    Other,
}

/// Basic Latin, Latin-1 Supplement, Latin Extended-A/B, Latin Extended
/// Additional and Latin Extended-C/D/E.
pub fn is_latin(c: char) -> bool {
    matches!(c as u32,
        0x0041..=0x005A
        | 0x0061..=0x007A
        | 0x00C0..=0x00D6
        | 0x00D8..=0x00F6
        | 0x00F8..=0x024F
        | 0x1E00..=0x1EFF
        | 0x2C60..=0x2C7F
        | 0xA720..=0xA7FF
        | 0xAB30..=0xAB6F)
}

pub fn block_of(c: char) -> Block {
    let u = c as u32;
    if is_latin(c) {
        Block::Latin
    } else if (0x0900..=0x097F).contains(&u) || (0xA8E0..=0xA8FF).contains(&u) {
        Block::Devanagari
    } else if (0x0980..=0x09FF).contains(&u) {
        Block::Bengali
    } else {
        Block::Other
    }
}

/// Letters are alphabetic characters; Indic vowel signs count as letters,
/// digits, punctuation, symbols and whitespace do not.
pub fn is_letter(c: char) -> bool {
    c.is_alphabetic()
}

/// Classifies `text` by the blocks its letters fall in.
///
/// Errors when the text has no letters at all.
pub fn detect_script(text: &str) -> Result<ScriptTag, CorpusError> {
    let (mut latin, mut deva, mut beng, mut other) = (false, false, false, false);
    for c in text.chars().filter(|&c| is_letter(c)) {
        match block_of(c) {
            Block::Latin => latin = true,
            Block::Devanagari => deva = true,
            Block::Bengali => beng = true,
            Block::Other => other = true,
        }
    }
    let non_roman = deva || beng || other;
    Ok(match (latin, non_roman) {
        (false, false) => {
            return Err(CorpusError::InvalidInput(format!("no letters in {text:?}")));
        }
        (true, false) => ScriptTag::Roman,
        (true, true) => ScriptTag::Mixed,
        (false, true) => match (deva, beng, other) {
            (true, false, false) => ScriptTag::Devanagari,
            (false, true, false) => ScriptTag::Bengali,
            _ => ScriptTag::Other,
        },
    })
}
