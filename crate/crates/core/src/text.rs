//! Deterministic tokenizers.
//!
//! Two tokenizers exist side by side. [`tokenize_metric`] feeds every overlap
//! metric, TF-IDF index and entity match; [`tokenize_length`] is the unit used
//! when truncating model inputs. Whitespace tokens only approximate subword
//! counts of any real model vocabulary.

use unicode_normalization::UnicodeNormalization;

/// NFKC-normalize, lowercase, and keep maximal runs of letters/digits.
pub fn tokenize_metric(text: &str) -> Vec<String> {
    // ASCII is already NFKC-stable
    let normalized: String = if text.is_ascii() {
        text.to_ascii_lowercase()
    } else {
        text.nfkc().flat_map(char::to_lowercase).collect()
    };
    normalized
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Split on runs of whitespace; case and punctuation are preserved.
pub fn tokenize_length(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Metric tokens joined with single spaces. Used as the key for entity lookup.
pub fn normalize_key(text: &str) -> String {
    tokenize_metric(text).join(" ")
}

/// True if `needle` occurs in `haystack` as a contiguous run.
pub fn contains_subsequence<T: PartialEq>(haystack: &[T], needle: &[T]) -> bool {
    if needle.is_empty() {
        return true;
    }
    needle.len() <= haystack.len() && haystack.windows(needle.len()).any(|w| w == needle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        assert!(tokenize_metric("").is_empty());
        assert_eq!(
            tokenize_metric("Barack Obama's alma-mater."),
            ["barack", "obama", "s", "alma", "mater"]
        );
        assert_eq!(tokenize_metric("The  Matrix (1999)!"), ["the", "matrix", "1999"]);
    }

    #[test]
    fn metric_applies_compatibility_normalization() {
        // fullwidth letters and the "fi" ligature fold to ascii
        assert_eq!(tokenize_metric("ＡＢＣ ﬁne"), ["abc", "fine"]);
    }

    #[test]
    fn length_examples() {
        assert_eq!(tokenize_length("a b  c"), ["a", "b", "c"]);
        assert_eq!(
            tokenize_length("knowledge: X | r | Y"),
            ["knowledge:", "X", "|", "r", "|", "Y"]
        );
        assert!(tokenize_length("").is_empty());
    }

    #[test]
    fn subsequence() {
        let hay = ["a", "b", "c"];
        assert!(contains_subsequence(&hay, &["b", "c"]));
        assert!(!contains_subsequence(&hay, &["a", "c"]));
        assert!(!contains_subsequence(&["a"], &["a", "b"]));
    }

    proptest::proptest! {
        #[test]
        fn ascii_fast_path_matches_full_normalization(text in "[ -~\t\n]{0,40}") {
            let full: String = text.nfkc().flat_map(char::to_lowercase).collect();
            let slow: Vec<String> = full
                .split(|c: char| !c.is_alphanumeric())
                .filter(|t| !t.is_empty())
                .map(str::to_owned)
                .collect();
            proptest::prop_assert_eq!(tokenize_metric(&text), slow);
        }
    }
}
