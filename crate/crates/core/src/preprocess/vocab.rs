use std::cmp::Ordering;
use std::collections::HashMap;

use super::{EOS_ID, RESERVED, UNK_ID};
use crate::error::{Error, Result};

/// Tokens seen fewer times than this across the corpus are dropped.
pub const DEFAULT_MIN_TERM_FREQUENCY: usize = 10;

/// Token/index map. Indices `0..6` are the reserved symbols; the remaining
/// tokens are ordered by TF-IDF weight, highest first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_term_frequency: usize,
}

impl Vocabulary {
    /// Reserved symbols followed by `tokens` in the given order. Duplicates and
    /// reserved names inside `tokens` are skipped.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
            min_term_frequency: 1,
        };
        for r in RESERVED {
            v.push(r.to_string());
        }
        for t in tokens {
            let t = t.into();
            if !v.index.contains_key(&t) {
                v.push(t);
            }
        }
        v
    }

    /// Rebuilds a vocabulary from its full token list (reserved prefix included).
    pub fn from_token_list(list: Vec<String>, min_term_frequency: usize) -> Result<Self> {
        if list.len() < RESERVED.len() || list.iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err(Error::Format(
                "vocabulary does not start with the reserved symbols".into(),
            ));
        }
        let mut v = Self::from_tokens(list.iter().skip(RESERVED.len()).cloned());
        if v.tokens.len() != list.len() {
            return Err(Error::Format("vocabulary contains duplicate tokens".into()));
        }
        v.min_term_frequency = min_term_frequency;
        Ok(v)
    }

    fn push(&mut self, t: String) {
        self.index.insert(t.clone(), self.tokens.len());
        self.tokens.push(t);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn min_term_frequency(&self) -> usize {
        self.min_term_frequency
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }
}

/// Counts term and document frequency, drops tokens with `tf < min_tf`, and
/// orders the survivors by `tf * ln(N / df)` descending, ties broken
/// lexicographically. Each inner list is one document.
pub fn build_vocabulary(documents: &[Vec<String>], min_tf: usize) -> Result<Vocabulary> {
    if min_tf == 0 {
        return Err(Error::usage("min_tf must be at least 1"));
    }
    if documents.is_empty() {
        return Err(Error::usage(
            "cannot build a vocabulary from an empty corpus",
        ));
    }
    let mut tf: HashMap<&str, usize> = HashMap::new();
    let mut df: HashMap<&str, usize> = HashMap::new();
    let mut seen: Vec<&str> = Vec::new();
    for doc in documents {
        seen.clear();
        for t in doc {
            *tf.entry(t.as_str()).or_default() += 1;
            seen.push(t.as_str());
        }
        seen.sort_unstable();
        seen.dedup();
        for t in &seen {
            *df.entry(t).or_default() += 1;
        }
    }
    let n_docs = documents.len() as f64;
    let mut ranked: Vec<(f64, &str)> = tf
        .iter()
        .filter(|(t, &count)| count >= min_tf && !RESERVED.contains(t))
        .map(|(&t, &count)| (count as f64 * (n_docs / df[t] as f64).ln(), t))
        .collect();
    ranked.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.1.cmp(b.1))
    });

    let mut v = Vocabulary::from_tokens(ranked.into_iter().map(|(_, t)| t.to_string()));
    v.min_term_frequency = min_tf;
    Ok(v)
}

/// Maps tokens to indices (unknown tokens to UNK), appends EOS and truncates
/// to `max_len`. Never pads.
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    let mut out: Vec<usize> = tokens
        .iter()
        .take(max_len)
        .map(|t| vocab.index_of(t.as_ref()).unwrap_or(UNK_ID))
        .collect();
    out.push(EOS_ID);
    out.truncate(max_len.max(1));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(texts: &[&str]) -> Vec<Vec<String>> {
        texts
            .iter()
            .map(|t| t.split_whitespace().map(String::from).collect())
            .collect()
    }

    #[test]
    fn min_tf_cut() {
        let d = vec![vec!["x".to_string(); 9], vec!["y".to_string(); 10]];
        let v = build_vocabulary(&d, 10).unwrap();
        assert_eq!(v.index_of("x"), None);
        assert_eq!(v.index_of("y"), Some(RESERVED.len()));

        let v = build_vocabulary(&docs(&["a a b"]), 1).unwrap();
        assert!(v.index_of("a").is_some() && v.index_of("b").is_some());
    }

    #[test]
    fn zero_idf_ranks_last() {
        // "c" occurs in every document (idf 0), "a" in one, "b" in two.
        let v = build_vocabulary(&docs(&["a c c c", "b c", "b c"]), 1).unwrap();
        let order: Vec<&str> = v.tokens()[RESERVED.len()..]
            .iter()
            .map(String::as_str)
            .collect();
        // weights: a = 1*ln3 = 1.0986, b = 2*ln1.5 = 0.8109, c = 0
        assert_eq!(order, vec!["a", "b", "c"]);
    }

    #[test]
    fn ties_are_lexicographic_and_reserved_always_present() {
        let v = build_vocabulary(&docs(&["q p", "r"]), 1).unwrap();
        // p and q: 1*ln2 each; r: 1*ln2 as well.
        assert_eq!(&v.tokens()[RESERVED.len()..], &["p", "q", "r"]);
        for (i, r) in RESERVED.iter().enumerate() {
            assert_eq!(v.index_of(r), Some(i));
        }
        assert!(build_vocabulary(&[], 1).is_err());
        assert!(build_vocabulary(&docs(&["a"]), 0).is_err());
    }

    #[test]
    fn encode_rules() {
        let v = Vocabulary::from_tokens(["hi"]);
        assert_eq!(encode::<&str>(&[], &v, 50), vec![EOS_ID]);
        assert_eq!(encode(&["zzz"], &v, 50), vec![UNK_ID, EOS_ID]);
        assert_eq!(encode(&["hi"], &v, 50), vec![6, EOS_ID]);
        let long: Vec<String> = (0..60)
            .map(|i| if i == 49 { "hi".into() } else { "x".into() })
            .collect();
        let e = encode(&long, &v, 50);
        assert_eq!(e.len(), 50);
        assert_eq!(*e.last().unwrap(), 6);
    }

    #[test]
    fn token_list_roundtrip() {
        let v = build_vocabulary(&docs(&["a b b", "c"]), 1).unwrap();
        let back = Vocabulary::from_token_list(v.tokens().to_vec(), 1).unwrap();
        assert_eq!(back, v);
        assert!(Vocabulary::from_token_list(vec!["a".into()], 1).is_err());
    }
}
