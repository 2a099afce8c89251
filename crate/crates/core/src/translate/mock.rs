use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{TranslateError, TranslatorBackend};
use crate::corpus::{block_of, Block};
use crate::langmix::{word_spans, BilingualLexicon};
use crate::util::derive_seed;

const DEVANAGARI: [&str; 26] = [
    "अ", "ब", "क", "द", "ए", "फ", "ग", "ह", "इ", "ज", "क", "ल", "म", "न", "ओ", "प", "क", "र", "स", "त", "उ", "व", "व",
    "क्स", "य", "ज",
];
const BENGALI: [&str; 26] = [
    "অ", "ব", "ক", "দ", "এ", "ফ", "গ", "হ", "ই", "জ", "ক", "ল", "ম", "ন", "ও", "প", "ক", "র", "স", "ত", "উ", "ভ", "ও",
    "ক্স", "য", "জ",
];

/// Letter-by-letter mapping of an ASCII word into `block`. Characters
/// outside a..z, and every character for a Latin target, are copied.
pub fn pseudo_transliterate(word: &str, block: Block) -> String {
    let table = match block {
        Block::Devanagari => &DEVANAGARI,
        Block::Bengali => &BENGALI,
        _ => return word.to_string(),
    };
    word.chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_ascii_lowercase() { table[(c as u8 - b'a') as usize].to_string() } else { c.to_string() })
        .collect()
}

fn target_block(lexicon: &BilingualLexicon) -> Block {
    lexicon
        .iter()
        .flat_map(|(_, e)| e.target.chars())
        .map(block_of)
        .find(|b| *b != Block::Other)
        .unwrap_or(Block::Latin)
}

/// Word-for-word lexicon substitution. Unknown words are pseudo-translated
/// letter by letter; with probability `noise_rate` a token is instead left
/// untranslated. The per-token draw depends only on the inputs and `seed`.
pub fn mock_translate(
    text: &str,
    source: &str,
    target: &str,
    lexicon: &BilingualLexicon,
    noise_rate: f64,
    seed: u64,
) -> String {
    assert!((0.0..1.0).contains(&noise_rate), "noise_rate must lie in [0, 1)");
    let block = target_block(lexicon);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("{source}|{target}|{text}")));
    let mut out = String::with_capacity(text.len() * 3);
    let mut cursor = 0;
    for (s, e) in word_spans(text) {
        out.push_str(&text[cursor..s]);
        let word = &text[s..e];
        let keep = noise_rate > 0.0 && rng.random::<f64>() < noise_rate;
        if keep {
            out.push_str(word);
        } else {
            match lexicon.get(&word.to_lowercase()) {
                Some(entry) => out.push_str(&entry.target),
                None => out.push_str(&pseudo_transliterate(word, block)),
            }
        }
        cursor = e;
    }
    out.push_str(&text[cursor..]);
    out
}

#[derive(Debug, Clone)]
pub struct MockTranslator {
    lexicon: BilingualLexicon,
    noise_rate: f64,
    seed: u64,
}

impl MockTranslator {
    pub fn new(lexicon: BilingualLexicon, noise_rate: f64, seed: u64) -> Result<Self, TranslateError> {
        if !(0.0..1.0).contains(&noise_rate) {
            return Err(TranslateError::Validation(format!("noise_rate {noise_rate} outside [0, 1)")));
        }
        Ok(Self { lexicon, noise_rate, seed })
    }

    pub fn lexicon(&self) -> &BilingualLexicon {
        &self.lexicon
    }
}

impl TranslatorBackend for MockTranslator {
    fn translate(&self, texts: &[String], source: &str, target: &str) -> Result<Vec<String>, TranslateError> {
        if source != self.lexicon.source || target != self.lexicon.target {
            return Err(TranslateError::Validation(format!(
                "mock translator holds a {}-{} lexicon, asked for {source}-{target}",
                self.lexicon.source, self.lexicon.target
            )));
        }
        Ok(texts.iter().map(|t| mock_translate(t, source, target, &self.lexicon, self.noise_rate, self.seed)).collect())
    }

    fn describe(&self) -> String {
        format!(
            "mock({}-{}, noise_rate={}, seed={})",
            self.lexicon.source, self.lexicon.target, self.noise_rate, self.seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{detect_script, ScriptTag};
    use crate::langmix::{romanize, TransliterationTable};

    #[test]
    fn full_coverage_without_noise_is_all_target_script() {
        let lex = BilingualLexicon::builtin("en-hi").unwrap();
        let out = mock_translate("What color is the circle?", "en", "hi", &lex, 0.0, 3);
        assert_eq!(detect_script(&out).unwrap(), ScriptTag::Devanagari);
        assert!(out.ends_with('?'));
    }

    #[test]
    fn out_of_lexicon_words_mapped_into_script() {
        let lex = BilingualLexicon::builtin("en-bn").unwrap();
        let out = mock_translate("zebra", "en", "bn", &lex, 0.0, 0);
        assert_eq!(out, "জএবরঅ");
        let hi = BilingualLexicon::builtin("en-hi").unwrap();
        let table = TransliterationTable::builtin("devanagari").unwrap();
        let deva = mock_translate("zebra quixotic", "en", "hi", &hi, 0.0, 0);
        assert!(romanize(&deva, &table).is_ok());
        let hl = BilingualLexicon::builtin("en-hl").unwrap();
        assert_eq!(mock_translate("zebra", "en", "hl", &hl, 0.0, 0), "zebra");
    }

    #[test]
    fn noise_keeps_tokens_untranslated() {
        let lex = BilingualLexicon::builtin("en-hi").unwrap();
        let text = "what color is the circle what color is the square what color is the star";
        let out = mock_translate(text, "en", "hi", &lex, 0.5, 1);
        let kept = out.split_whitespace().zip(text.split_whitespace()).filter(|(a, b)| a == b).count();
        assert!(kept > 0 && kept < 15, "kept {kept}");
        assert_eq!(out, mock_translate(text, "en", "hi", &lex, 0.5, 1));
        assert_ne!(out, mock_translate(text, "en", "hi", &lex, 0.5, 2));
    }

    #[test]
    #[should_panic]
    fn noise_rate_one_excluded() {
        let lex = BilingualLexicon::builtin("en-hi").unwrap();
        mock_translate("x", "en", "hi", &lex, 1.0, 0);
    }
}
