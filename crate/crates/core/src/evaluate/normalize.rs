const PUNCTUATION: &[char] = &['.', ',', '?', '!', ';', ':', '\'', '"', '(', ')'];
const ARTICLES: &[&str] = &["a", "an", "the"];
const NUMBER_WORDS: &[&str] = &[
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
];

/// Answer normalization used by both the metric and vocabulary building:
/// lowercase, punctuation stripped, articles dropped, number words zero to
/// ten mapped to digits, whitespace collapsed. Contractions are left as is.
pub fn normalize_answer(answer: &str) -> String {
    let lowered: String = answer
        .to_lowercase()
        .chars()
        .filter(|c| !PUNCTUATION.contains(c))
        .collect();
    let mut out = String::with_capacity(lowered.len());
    for token in lowered.split_whitespace() {
        if ARTICLES.contains(&token) {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        match NUMBER_WORDS.iter().position(|w| *w == token) {
            Some(n) => out.push_str(&n.to_string()),
            None => out.push_str(token),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rules() {
        assert_eq!(normalize_answer("The Red"), "red");
        assert_eq!(normalize_answer("two"), "2");
        assert_eq!(normalize_answer("yes "), "yes");
        assert_eq!(normalize_answer("  a   big\tdog. "), "big dog");
        assert_eq!(normalize_answer("\"Ten!\""), "10");
        assert_eq!(normalize_answer("theory"), "theory");
        assert_eq!(normalize_answer("don't"), "dont");
        assert_eq!(normalize_answer(""), "");
    }

    #[test]
    fn idempotent() {
        for s in ["The Red", "an Apple (green)", "eleven", "ZERO"] {
            let once = normalize_answer(s);
            assert_eq!(normalize_answer(&once), once);
        }
    }
}
