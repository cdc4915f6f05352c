//! Text normalization, tokenization, vocabulary construction and encoding.

mod normalize;
mod vocab;

pub use normalize::{
    normalize_text, parse_abbreviations, parse_emoticons, NormRuleSet, DEFAULT_LONG_WORD_LIMIT,
};
pub use vocab::{build_vocabulary, encode, Vocabulary, DEFAULT_MIN_TERM_FREQUENCY};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";
pub const NUMBER: &str = "00NUM";
pub const LONG_WORD: &str = "00LW";
pub const URL: &str = "00URL";

/// Reserved symbols in index order; they occupy indices `0..RESERVED.len()`
/// of every vocabulary.
pub const RESERVED: [&str; 6] = [PAD, UNK, EOS, NUMBER, LONG_WORD, URL];

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const EOS_ID: usize = 2;

/// Splits on whitespace and emits every ASCII punctuation character as its
/// own token.
pub fn tokenize(normalized: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in normalized.split_whitespace() {
        let mut current = String::new();
        for ch in word.chars() {
            if ch.is_ascii_punctuation() {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(ch.to_string());
            } else {
                current.push(ch);
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

/// `normalize_text` followed by `tokenize`.
pub fn normalize_and_tokenize(raw: &str, rules: &NormRuleSet) -> Vec<String> {
    tokenize(&normalize_text(raw, rules))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_examples() {
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("hello, world"), vec!["hello", ",", "world"]);
        assert_eq!(tokenize("00NUM?"), vec!["00NUM", "?"]);
        assert_eq!(tokenize("  a..b  "), vec!["a", ".", ".", "b"]);
    }
}
