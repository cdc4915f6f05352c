use std::collections::HashMap;
use std::fs;
use std::path::Path;

use regex::{Regex, RegexSet};

use super::{LONG_WORD, NUMBER, RESERVED, URL};
use crate::error::{Error, Result};

const DEFAULT_ABBREVIATIONS: &str = include_str!("data/abbreviations.tsv");
const DEFAULT_EMOTICONS: &str = include_str!("data/emoticons.txt");

/// Tokens longer than this many characters become [`LONG_WORD`].
pub const DEFAULT_LONG_WORD_LIMIT: usize = 30;

const LEADING_PUNCT: &[char] = &['"', '\'', '(', '[', '{', '<', '*'];
const TRAILING_PUNCT: &[char] = &[
    '.', ',', '!', '?', ';', ':', '"', '\'', ')', ']', '}', '>', '*',
];

/// Normalization tables: abbreviation expansions, emoticon patterns and the
/// long-word limit.
#[derive(Clone, Debug)]
pub struct NormRuleSet {
    abbreviations: HashMap<String, String>,
    emoticon_sources: Vec<String>,
    emoticons: RegexSet,
    pub long_word_limit: usize,
    pub collapse_elongation: bool,
    url: Regex,
    number: Regex,
}

impl Default for NormRuleSet {
    fn default() -> Self {
        let abbreviations =
            parse_abbreviations(DEFAULT_ABBREVIATIONS).expect("shipped abbreviation table");
        let emoticons = parse_emoticons(DEFAULT_EMOTICONS);
        Self::new(abbreviations, emoticons, DEFAULT_LONG_WORD_LIMIT)
            .expect("shipped emoticon table")
    }
}

impl NormRuleSet {
    pub fn new(
        abbreviations: HashMap<String, String>,
        emoticon_patterns: Vec<String>,
        long_word_limit: usize,
    ) -> Result<Self> {
        for key in abbreviations.keys() {
            if key.is_empty()
                || key
                    .chars()
                    .any(|c| c.is_whitespace() || c.is_ascii_uppercase())
            {
                return Err(Error::Config(format!(
                    "abbreviation key {key:?} must be a lowercase single token"
                )));
            }
        }
        let anchored: Vec<String> = emoticon_patterns
            .iter()
            .map(|p| format!("^(?:{p})$"))
            .collect();
        let emoticons = RegexSet::new(&anchored)
            .map_err(|e| Error::Config(format!("bad emoticon pattern: {e}")))?;
        Ok(Self {
            abbreviations,
            emoticon_sources: emoticon_patterns,
            emoticons,
            long_word_limit,
            collapse_elongation: true,
            url: Regex::new(r"(?i)^(?:(?:https?|ftp)://|www\.)\S+$").expect("url regex"),
            number: Regex::new(r"^[+-]?(?:\d+(?:\.\d*)?|\.\d+)$").expect("number regex"),
        })
    }

    /// Shipped tables extended (and overridden) by optional user files.
    pub fn with_files(
        abbreviations: Option<&Path>,
        emoticons: Option<&Path>,
        long_word_limit: usize,
    ) -> Result<Self> {
        let mut abbr = parse_abbreviations(DEFAULT_ABBREVIATIONS)?;
        let mut emo = parse_emoticons(DEFAULT_EMOTICONS);
        if let Some(p) = abbreviations {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            abbr.extend(parse_abbreviations(&text)?);
        }
        if let Some(p) = emoticons {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            emo.extend(parse_emoticons(&text));
        }
        Self::new(abbr, emo, long_word_limit)
    }

    pub fn abbreviations(&self) -> &HashMap<String, String> {
        &self.abbreviations
    }

    pub fn emoticon_patterns(&self) -> &[String] {
        &self.emoticon_sources
    }

    fn is_emoticon(&self, s: &str) -> bool {
        !s.is_empty() && self.emoticons.is_match(s)
    }
}

/// Parses `short<TAB>expansion` lines; `#` starts a comment line.
pub fn parse_abbreviations(text: &str) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let (short, long) = line.split_once('\t').ok_or_else(|| {
            Error::Config(format!("abbreviation line {} lacks a tab: {line:?}", n + 1))
        })?;
        map.insert(short.trim().to_string(), long.trim().to_string());
    }
    Ok(map)
}

pub fn parse_emoticons(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect()
}

/// Collapses runs of three or more identical letters to one letter.
fn collapse_elongation(word: &str) -> String {
    let chars: Vec<char> = word.chars().collect();
    let mut out = String::with_capacity(word.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let mut j = i;
        while j < chars.len() && chars[j] == c {
            j += 1;
        }
        let run = j - i;
        if c.is_ascii_alphabetic() && run >= 3 {
            out.push(c);
        } else {
            out.extend(&chars[i..j]);
        }
        i = j;
    }
    out
}

fn split_affixes(token: &str) -> (&str, &str, &str) {
    let rest = token.trim_start_matches(LEADING_PUNCT);
    let lead = &token[..token.len() - rest.len()];
    let core = rest.trim_end_matches(TRAILING_PUNCT);
    let trail = &rest[core.len()..];
    (lead, core, trail)
}

/// Applies the normalization rules in a fixed order: strip non-ASCII, drop
/// emoticons, `00URL`, `00LW`, `00NUM`, lowercase, expand abbreviations.
///
/// Rules after emoticon removal act on the core of each whitespace token,
/// i.e. the token without its leading/trailing punctuation.
pub fn normalize_text(raw: &str, rules: &NormRuleSet) -> String {
    let ascii: String = raw.chars().filter(char::is_ascii).collect();
    let mut out: Vec<String> = Vec::new();
    for token in ascii.split_ascii_whitespace() {
        if rules.is_emoticon(token) {
            continue;
        }
        let (lead, core, mut trail) = split_affixes(token);
        if rules.is_emoticon(trail) {
            trail = "";
        }
        let core = normalize_core(core, rules);
        let piece = format!("{lead}{core}{trail}");
        if !piece.is_empty() {
            out.push(piece);
        }
    }
    out.join(" ")
}

fn normalize_core(core: &str, rules: &NormRuleSet) -> String {
    if core.is_empty() {
        return String::new();
    }
    if rules.url.is_match(core) {
        return URL.to_string();
    }
    if core.chars().count() > rules.long_word_limit {
        return LONG_WORD.to_string();
    }
    if rules.number.is_match(core) {
        return NUMBER.to_string();
    }
    if RESERVED.contains(&core) {
        return core.to_string();
    }
    let mut word = core.to_ascii_lowercase();
    if rules.collapse_elongation {
        word = collapse_elongation(&word);
    }
    match rules.abbreviations.get(&word) {
        Some(exp) => exp.clone(),
        None => word,
    }
}
