//! Corpus ingestion: PAN-style chat XML, ground-truth author lists, labeled
//! review directory trees, conversation labeling, filtering and grouping by
//! author.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use indexmap::IndexMap;
use quick_xml::escape::escape;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use crate::author::AuthorClass;
use crate::error::{Error, Result};
use crate::preprocess::{normalize_text, tokenize, NormRuleSet};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub author: String,
    pub line_no: usize,
    /// Kept verbatim; never interpreted.
    pub time: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conversation {
    pub id: String,
    pub messages: Vec<Message>,
}

impl Conversation {
    /// Distinct authors in order of first appearance.
    pub fn participants(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.messages
            .iter()
            .filter(|m| seen.insert(m.author.as_str()))
            .map(|m| m.author.as_str())
            .collect()
    }
}

/// A message or conversation that was skipped while parsing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordError {
    pub conversation: String,
    pub line_no: Option<usize>,
    pub reason: String,
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line_no {
            Some(l) => write!(
                f,
                "conversation {} line {}: {}",
                self.conversation, l, self.reason
            ),
            None => write!(f, "conversation {}: {}", self.conversation, self.reason),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParsedCorpus {
    pub conversations: Vec<Conversation>,
    pub skipped: Vec<RecordError>,
}

#[derive(Default)]
struct PendingMessage {
    line: Option<String>,
    author: Option<String>,
    time: Option<String>,
    text: Option<String>,
}

#[derive(Clone, Copy, PartialEq)]
enum Field {
    Author,
    Time,
    Text,
}

impl Field {
    fn from_name(name: &[u8]) -> Option<Self> {
        match name {
            b"author" => Some(Field::Author),
            b"time" => Some(Field::Time),
            b"text" => Some(Field::Text),
            _ => None,
        }
    }
}

impl PendingMessage {
    fn slot(&mut self, f: Field) -> &mut String {
        match f {
            Field::Author => &mut self.author,
            Field::Time => &mut self.time,
            Field::Text => &mut self.text,
        }
        .get_or_insert_with(String::new)
    }
}

fn attr(e: &BytesStart<'_>, name: &[u8]) -> Result<Option<String>> {
    for a in e.attributes() {
        let a = a.map_err(|err| Error::Parse {
            offset: 0,
            message: err.to_string(),
        })?;
        if a.key.as_ref() == name {
            let v = a.unescape_value().map_err(|err| Error::Parse {
                offset: 0,
                message: err.to_string(),
            })?;
            return Ok(Some(v.into_owned()));
        }
    }
    Ok(None)
}

/// Streams a PAN-style corpus. Messages lacking an author or a valid `line`
/// attribute are skipped and reported in [`ParsedCorpus::skipped`].
pub fn parse_pan_corpus<R: BufRead>(input: R) -> Result<ParsedCorpus> {
    let mut reader = Reader::from_reader(input);
    let mut buf = Vec::new();
    let mut out = ParsedCorpus::default();

    let mut conv: Option<Conversation> = None;
    let mut msg: Option<PendingMessage> = None;
    let mut field: Option<Field> = None;

    let parse_err = |reader: &Reader<R>, message: String| Error::Parse {
        offset: reader.buffer_position(),
        message,
    };

    loop {
        let event = reader.read_event_into(&mut buf).map_err(|e| Error::Parse {
            offset: reader.error_position(),
            message: e.to_string(),
        })?;
        match event {
            Event::Start(e) => match e.name().as_ref() {
                b"conversation" => {
                    let id = attr(&e, b"id").map_err(|err| parse_err(&reader, err.to_string()))?;
                    conv = Some(Conversation {
                        id: id.unwrap_or_default(),
                        messages: Vec::new(),
                    });
                }
                b"message" if conv.is_some() => {
                    msg = Some(PendingMessage {
                        line: attr(&e, b"line")
                            .map_err(|err| parse_err(&reader, err.to_string()))?,
                        ..Default::default()
                    });
                }
                name if msg.is_some() => field = Field::from_name(name),
                _ => {}
            },
            Event::Empty(e) => match e.name().as_ref() {
                b"conversation" => out.conversations.push(Conversation {
                    id: attr(&e, b"id")
                        .map_err(|err| parse_err(&reader, err.to_string()))?
                        .unwrap_or_default(),
                    messages: Vec::new(),
                }),
                name => {
                    if let (Some(f), Some(m)) = (Field::from_name(name), msg.as_mut()) {
                        m.slot(f);
                    }
                }
            },
            Event::Text(t) => {
                if let (Some(f), Some(m)) = (field, msg.as_mut()) {
                    let s = t
                        .unescape()
                        .map_err(|err| parse_err(&reader, err.to_string()))?;
                    m.slot(f).push_str(&s);
                }
            }
            Event::CData(t) => {
                if let (Some(f), Some(m)) = (field, msg.as_mut()) {
                    let s = String::from_utf8(t.into_inner().into_owned())
                        .map_err(|err| parse_err(&reader, err.to_string()))?;
                    m.slot(f).push_str(&s);
                }
            }
            Event::End(e) => match e.name().as_ref() {
                b"author" | b"time" | b"text" => {
                    if let (Some(f), Some(m)) = (field.take(), msg.as_mut()) {
                        m.slot(f);
                    }
                }
                b"message" => {
                    if let (Some(m), Some(c)) = (msg.take(), conv.as_mut()) {
                        match finish_message(m, c) {
                            Ok(message) => c.messages.push(message),
                            Err(e) => out.skipped.push(e),
                        }
                    }
                }
                b"conversation" => {
                    if let Some(mut c) = conv.take() {
                        c.messages.sort_by_key(|m| m.line_no);
                        out.conversations.push(c);
                    }
                }
                _ => {}
            },
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    if conv.is_some() {
        return Err(parse_err(
            &reader,
            "unterminated conversation element".into(),
        ));
    }
    Ok(out)
}

fn finish_message(m: PendingMessage, conv: &Conversation) -> Result<Message, RecordError> {
    let line_no = m
        .line
        .as_deref()
        .and_then(|l| l.trim().parse::<usize>().ok());
    let fail = |reason: &str| RecordError {
        conversation: conv.id.clone(),
        line_no,
        reason: reason.to_string(),
    };
    let line_no = match line_no {
        Some(l) if l >= 1 => l,
        _ => return Err(fail("missing or invalid line attribute")),
    };
    if conv.messages.iter().any(|x| x.line_no == line_no) {
        return Err(fail("duplicate line number"));
    }
    let author = match m.author.map(|a| a.trim().to_string()) {
        Some(a) if !a.is_empty() => a,
        _ => return Err(fail("missing author")),
    };
    Ok(Message {
        author,
        line_no,
        time: m.time.unwrap_or_default(),
        text: m.text.unwrap_or_default(),
    })
}

pub fn read_pan_corpus(path: &Path) -> Result<ParsedCorpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_pan_corpus(BufReader::new(file))
}

/// Serializes conversations in the layout [`parse_pan_corpus`] reads.
pub fn write_pan_corpus<W: Write>(conversations: &[Conversation], mut w: W) -> std::io::Result<()> {
    writeln!(w, r#"<?xml version="1.0" encoding="UTF-8"?>"#)?;
    writeln!(w, "<conversations>")?;
    for c in conversations {
        writeln!(w, r#"  <conversation id="{}">"#, escape(c.id.as_str()))?;
        for m in &c.messages {
            writeln!(w, r#"    <message line="{}">"#, m.line_no)?;
            writeln!(w, "      <author>{}</author>", escape(m.author.as_str()))?;
            writeln!(w, "      <time>{}</time>", escape(m.time.as_str()))?;
            writeln!(w, "      <text>{}</text>", escape(m.text.as_str()))?;
            writeln!(w, "    </message>")?;
        }
        writeln!(w, "  </conversation>")?;
    }
    writeln!(w, "</conversations>")?;
    Ok(())
}

/// One author id per line; trimmed, blank lines skipped, duplicates merged.
pub fn parse_ground_truth<R: BufRead>(input: R) -> Result<BTreeSet<String>> {
    let mut ids = BTreeSet::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<ground truth>", e))?;
        let id = line.trim();
        if !id.is_empty() {
            ids.insert(id.to_string());
        }
    }
    Ok(ids)
}

pub fn read_ground_truth(path: &Path) -> Result<BTreeSet<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_ground_truth(BufReader::new(file))
}

pub fn write_ground_truth<'a, W: Write>(
    ids: impl IntoIterator<Item = &'a String>,
    mut w: W,
) -> std::io::Result<()> {
    for id in ids {
        writeln!(w, "{id}")?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReviewLabel {
    Pos,
    Neg,
}

/// Loads `root/pos/*.txt` then `root/neg/*.txt`, each in lexicographic file
/// name order.
pub fn load_review_tree(root: &Path) -> Result<Vec<(String, ReviewLabel)>> {
    let mut out = Vec::new();
    for (dir, label) in [("pos", ReviewLabel::Pos), ("neg", ReviewLabel::Neg)] {
        let sub = root.join(dir);
        if !sub.is_dir() {
            return Err(Error::Config(format!(
                "review tree is missing {}",
                sub.display()
            )));
        }
        let mut files: Vec<_> = fs::read_dir(&sub)
            .map_err(|e| Error::io(&sub, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "txt"))
            .collect();
        files.sort();
        for f in files {
            let text = fs::read_to_string(&f).map_err(|e| Error::io(&f, e))?;
            out.push((text, label));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledConversation {
    pub conversation: Conversation,
    pub positive: bool,
}

/// Positive iff some message author is a known predator.
pub fn label_conversations(
    convs: Vec<Conversation>,
    predator_ids: &BTreeSet<String>,
) -> Vec<LabeledConversation> {
    convs
        .into_iter()
        .map(|c| {
            let positive = c.messages.iter().any(|m| predator_ids.contains(&m.author));
            LabeledConversation {
                conversation: c,
                positive,
            }
        })
        .collect()
}

/// Normalizes the text of every message; structure is untouched.
pub fn normalize_conversation(conv: &Conversation, rules: &NormRuleSet) -> Conversation {
    Conversation {
        id: conv.id.clone(),
        messages: conv
            .messages
            .iter()
            .map(|m| Message {
                text: normalize_text(&m.text, rules),
                ..m.clone()
            })
            .collect(),
    }
}

/// Conversation and author counts in the layout of a dataset attribute table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CorpusCounts {
    pub positive: usize,
    pub negative: usize,
    pub non_predators: usize,
    pub predators: usize,
}

impl CorpusCounts {
    pub fn of(convs: &[LabeledConversation], predator_ids: &BTreeSet<String>) -> Self {
        let mut authors: HashSet<&str> = HashSet::new();
        let mut counts = Self::default();
        for lc in convs {
            if lc.positive {
                counts.positive += 1;
            } else {
                counts.negative += 1;
            }
            authors.extend(lc.conversation.messages.iter().map(|m| m.author.as_str()));
        }
        counts.predators = authors
            .iter()
            .filter(|a| predator_ids.contains(**a))
            .count();
        counts.non_predators = authors.len() - counts.predators;
        counts
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FilterReport {
    pub original: CorpusCounts,
    pub filtered: CorpusCounts,
}

impl fmt::Display for FilterReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14}{:>12}{:>12}", "Type", "Original", "Filtered")?;
        let rows = [
            ("Positive", self.original.positive, self.filtered.positive),
            ("Negative", self.original.negative, self.filtered.negative),
            (
                "Non-predators",
                self.original.non_predators,
                self.filtered.non_predators,
            ),
            (
                "Predators",
                self.original.predators,
                self.filtered.predators,
            ),
        ];
        for (name, a, b) in rows {
            writeln!(f, "{name:<14}{a:>12}{b:>12}")?;
        }
        Ok(())
    }
}

/// Drops messages whose normalized text has no tokens, then drops
/// conversations left without messages. Participants whose every line was
/// empty disappear with their messages.
pub fn filter_corpus(
    labeled: Vec<LabeledConversation>,
    predator_ids: &BTreeSet<String>,
) -> (Vec<LabeledConversation>, FilterReport) {
    let original = CorpusCounts::of(&labeled, predator_ids);
    let kept: Vec<LabeledConversation> = labeled
        .into_iter()
        .filter_map(|mut lc| {
            lc.conversation
                .messages
                .retain(|m| !tokenize(&m.text).is_empty());
            (!lc.conversation.messages.is_empty()).then_some(lc)
        })
        .collect();
    let filtered = CorpusCounts::of(&kept, predator_ids);
    (kept, FilterReport { original, filtered })
}

/// All lines of one author, keyed by conversation id in corpus order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuthorDocument {
    pub author: String,
    pub per_conversation_lines: IndexMap<String, Vec<String>>,
}

impl AuthorDocument {
    pub fn line_count(&self) -> usize {
        self.per_conversation_lines.values().map(Vec::len).sum()
    }
}

/// One document per author, in order of the author's first appearance.
pub fn group_by_author(labeled: &[LabeledConversation]) -> Vec<AuthorDocument> {
    let mut docs: IndexMap<String, AuthorDocument> = IndexMap::new();
    for lc in labeled {
        let c = &lc.conversation;
        for m in &c.messages {
            docs.entry(m.author.clone())
                .or_insert_with(|| AuthorDocument {
                    author: m.author.clone(),
                    per_conversation_lines: IndexMap::new(),
                })
                .per_conversation_lines
                .entry(c.id.clone())
                .or_default()
                .push(m.text.clone());
        }
    }
    docs.into_values().collect()
}

/// Training roles for the author model: known predators are `Predator`, other
/// participants of positive conversations are `Victim`, everyone else is
/// `Normal`.
pub fn assign_author_roles(
    labeled: &[LabeledConversation],
    predator_ids: &BTreeSet<String>,
) -> IndexMap<String, AuthorClass> {
    let mut roles: IndexMap<String, AuthorClass> = IndexMap::new();
    for lc in labeled {
        for author in lc.conversation.participants() {
            let role = if predator_ids.contains(author) {
                AuthorClass::Predator
            } else if lc.positive {
                AuthorClass::Victim
            } else {
                AuthorClass::Normal
            };
            let entry = roles.entry(author.to_string()).or_insert(role);
            if role.training_priority() > entry.training_priority() {
                *entry = role;
            }
        }
    }
    roles
}
