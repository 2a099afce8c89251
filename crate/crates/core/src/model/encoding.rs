use std::collections::BTreeMap;

use crate::util::fnv1a64;

/// Word boundary marker wrapped around every token before n-gram extraction.
const BOUNDARY: char = '#';

/// Hashed character n-gram bag: sorted bucket indices with positive counts.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TextEncoding {
    pub indices: Vec<u32>,
    pub counts: Vec<u32>,
}

impl TextEncoding {
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.indices.iter().copied().zip(self.counts.iter().copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextEncoder {
    pub ngram: usize,
    pub buckets: usize,
}

impl TextEncoder {
    pub fn new(ngram: usize, buckets: usize) -> Self {
        assert!(ngram > 0 && buckets > 0, "n-gram size and bucket count must be positive");
        Self { ngram, buckets }
    }

    /// Character n-grams of each lowercased whitespace token wrapped in
    /// boundary markers; a token shorter than `n` contributes itself.
    /// Identical n-grams in different scripts are impossible, so distinct
    /// scripts only share buckets through hash collisions.
    pub fn encode(&self, text: &str) -> TextEncoding {
        let mut bag: BTreeMap<u32, u32> = BTreeMap::new();
        let mut gram = String::new();
        for raw in text.split_whitespace() {
            let core = raw.trim_matches(|c: char| c.is_ascii_punctuation());
            let token = if core.is_empty() { raw } else { core };
            let chars: Vec<char> = std::iter::once(BOUNDARY)
                .chain(token.chars().flat_map(char::to_lowercase))
                .chain(std::iter::once(BOUNDARY))
                .collect();
            let windows = chars.len().saturating_sub(self.ngram) + 1;
            let n = self.ngram.min(chars.len());
            for start in 0..windows {
                gram.clear();
                gram.extend(&chars[start..start + n]);
                let bucket = (fnv1a64(gram.as_bytes()) % self.buckets as u64) as u32;
                *bag.entry(bucket).or_default() += 1;
            }
        }
        let (indices, counts) = bag.into_iter().unzip();
        TextEncoding { indices, counts }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::langmix::{romanize, TransliterationTable};

    #[test]
    fn empty_string_is_empty_bag() {
        let enc = TextEncoder::new(3, 1 << 15);
        assert!(enc.encode("").is_empty());
        assert!(enc.encode("   ").is_empty());
    }

    #[test]
    fn counts_and_bounds() {
        let enc = TextEncoder::new(3, 64);
        let e = enc.encode("bus bus");
        assert!(e.indices.iter().all(|&i| (i as usize) < 64));
        assert!(e.counts.iter().all(|&c| c > 0));
        // "#bus#" has 3 trigrams, twice
        assert_eq!(e.counts.iter().sum::<u32>(), 6);
        assert!(e.indices.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn short_tokens_and_case() {
        let enc = TextEncoder::new(5, 1 << 15);
        assert_eq!(enc.encode("a").counts.iter().sum::<u32>(), 1);
        assert_eq!(enc.encode("Bus?"), enc.encode("bus"));
    }

    #[test]
    fn scripts_have_disjoint_support() {
        let enc = TextEncoder::new(3, 1 << 20);
        let table = TransliterationTable::builtin("devanagari").unwrap();
        let lex = crate::langmix::BilingualLexicon::builtin("en-hi").unwrap();
        let deva: Vec<String> = lex.iter().map(|(_, e)| e.target.clone()).collect();
        let deva = deva.join(" ");
        let roman = romanize(&deva, &table).unwrap();
        let a = enc.encode(&deva);
        let b = enc.encode(&roman);
        let shared = a.indices.iter().filter(|i| b.indices.binary_search(i).is_ok()).count();
        let overlap = shared as f64 / a.len().min(b.len()) as f64;
        assert!(overlap < 0.01, "overlap {overlap}");
    }
}
