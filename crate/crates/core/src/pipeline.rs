//! File-based pipeline stages. Each stage reads the artifacts of earlier
//! stages from the output directory and writes its own, so running
//! [`run_pipeline`] is the same as running every stage in order.
//!
//! | stage          | reads                                   | writes |
//! |----------------|-----------------------------------------|--------|
//! | preprocess     | raw corpora and ground truth            | `train.xml`, `test.xml`, `*_truth.txt`, `filter_report.txt` |
//! | build-vocab    | `train.xml`                             | `vocab.txt` |
//! | train-lm       | `vocab.txt`, `train.xml`                | `lm.bin`, `lm_log.txt` |
//! | eval-lm        | `lm.bin`, `test.xml`                    | `lm_eval.txt` |
//! | vectorize      | `lm.bin`, `*.xml`                       | `train_vectors.bin`, `test_vectors.bin` |
//! | train-scd      | `train_vectors.bin`                     | `scd.bin`, `scd_log.txt` |
//! | eval-scd       | `scd.bin`, `test_vectors.bin`           | `scd_verdicts.tsv`, `scd_eval.txt` |
//! | train-author   | `train.xml`, `train_truth.txt`          | `author.bin`, `author_log.txt` |
//! | score-authors  | `author.bin`, `test.xml`                | `author_scores.tsv` |
//! | identify       | `scd_verdicts.tsv`, `author_scores.tsv`, `test.xml` | `predators.txt`, `report.txt` |

use std::collections::BTreeSet;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::author::{
    author_units, build_feature_vocab, identify_predators, mark_flagged, read_scores,
    score_authors, train_author, write_scores, AuthorTrainConfig, ShallowModel,
    DEFAULT_MIN_FEATURE_FREQUENCY,
};
use crate::corpus::{
    assign_author_roles, filter_corpus, label_conversations, load_review_tree,
    normalize_conversation, read_ground_truth, read_pan_corpus, write_ground_truth,
    write_pan_corpus, Conversation, LabeledConversation, Message, ReviewLabel,
};
use crate::error::{Error, Result};
use crate::lm::{perplexity, train_lm, LanguageModel, LmConfig, LmTrainConfig};
use crate::math::{derive_seed, OptimizerKind, Rng};
use crate::metrics::{accuracy, confusion, ConfusionCounts, MetricsReport, ReportRow};
use crate::preprocess::{
    build_vocabulary, encode, tokenize, NormRuleSet, Vocabulary, DEFAULT_LONG_WORD_LIMIT,
    DEFAULT_MIN_TERM_FREQUENCY,
};
use crate::scd::{
    chunk_and_pad, classify_sequences, read_verdicts, train_scd, vectorize_conversation,
    write_verdicts, ConversationSequence, ScdConfig, ScdModel, ScdTrainConfig, DEFAULT_CHUNK_LEN,
    DEFAULT_THRESHOLD,
};
use crate::store;
use crate::synth::{generate, SynthSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub train_corpus: Option<PathBuf>,
    pub train_truth: Option<PathBuf>,
    pub test_corpus: Option<PathBuf>,
    pub test_truth: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            train_corpus: None,
            train_truth: None,
            test_corpus: None,
            test_truth: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    pub min_tf: usize,
    pub long_word_limit: usize,
    /// Extra abbreviation table merged over the built-in one.
    pub abbreviations: Option<PathBuf>,
    /// Extra emoticon patterns added to the built-in ones.
    pub emoticons: Option<PathBuf>,
    /// Tokens per sentence, EOS included, fed to the language model.
    pub max_sentence_len: usize,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self {
            min_tf: DEFAULT_MIN_TERM_FREQUENCY,
            long_word_limit: DEFAULT_LONG_WORD_LIMIT,
            abbreviations: None,
            emoticons: None,
            max_sentence_len: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSection {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub bias: bool,
    pub window: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub batch: usize,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm clip; 0 disables.
    pub clip: f64,
    /// Share of training messages held out for validation perplexity.
    pub validation_fraction: f64,
}

impl Default for LmSection {
    fn default() -> Self {
        let m = LmConfig::default();
        let t = LmTrainConfig::default();
        Self {
            embed_dim: m.embed_dim,
            hidden_dim: m.hidden_dim,
            bias: m.bias,
            window: t.window,
            epochs: t.epochs,
            lr: t.lr,
            lr_decay: t.lr_decay,
            batch: t.batch,
            optimizer: t.optimizer,
            clip: t.clip.unwrap_or(0.0),
            validation_fraction: 0.05,
        }
    }
}

impl LmSection {
    pub fn model(&self) -> LmConfig {
        LmConfig {
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            bias: self.bias,
        }
    }

    pub fn train(&self) -> LmTrainConfig {
        LmTrainConfig {
            window: self.window,
            epochs: self.epochs,
            lr: self.lr,
            lr_decay: self.lr_decay,
            batch: self.batch,
            optimizer: self.optimizer,
            clip: positive(self.clip),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScdSection {
    pub hidden_dim: usize,
    pub chunk_len: usize,
    pub bias: bool,
    pub masked: bool,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm clip; 0 disables.
    pub clip: f64,
    /// Negatives per positive kept each epoch; 0 keeps every negative.
    pub negative_ratio: f64,
    pub threshold: f64,
    /// Share of training conversations (per class) held out to pick the best epoch.
    pub validation_fraction: f64,
}

impl Default for ScdSection {
    fn default() -> Self {
        let m = ScdConfig::default();
        let t = ScdTrainConfig::default();
        Self {
            hidden_dim: m.hidden_dim,
            chunk_len: DEFAULT_CHUNK_LEN,
            bias: m.bias,
            masked: m.masked,
            epochs: t.epochs,
            lr: t.lr,
            batch: t.batch,
            optimizer: t.optimizer,
            clip: t.clip.unwrap_or(0.0),
            negative_ratio: t.negative_ratio.unwrap_or(0.0),
            threshold: DEFAULT_THRESHOLD,
            validation_fraction: 0.1,
        }
    }
}

impl ScdSection {
    pub fn model(&self) -> ScdConfig {
        ScdConfig {
            hidden_dim: self.hidden_dim,
            chunk_len: self.chunk_len,
            bias: self.bias,
            masked: self.masked,
        }
    }

    pub fn train(&self) -> ScdTrainConfig {
        ScdTrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch: self.batch,
            optimizer: self.optimizer,
            clip: positive(self.clip),
            negative_ratio: positive(self.negative_ratio),
            threshold: self.threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuthorSection {
    /// Embedding width k.
    pub dim: usize,
    pub bigrams: bool,
    pub min_feature_freq: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: bool,
    /// Per-update gradient-norm clip; 0 disables.
    pub clip: f64,
    pub balance_classes: bool,
}

impl Default for AuthorSection {
    fn default() -> Self {
        let t = AuthorTrainConfig::default();
        Self {
            dim: 10,
            bigrams: true,
            min_feature_freq: DEFAULT_MIN_FEATURE_FREQUENCY,
            epochs: t.epochs,
            lr: t.lr,
            lr_decay: t.lr_decay,
            clip: t.clip.unwrap_or(0.0),
            balance_classes: t.balance_classes,
        }
    }
}

impl AuthorSection {
    pub fn train(&self) -> AuthorTrainConfig {
        AuthorTrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            lr_decay: self.lr_decay,
            clip: positive(self.clip),
            balance_classes: self.balance_classes,
        }
    }
}

/// Settings for the `synth` stage. The generator seed is derived from the
/// run seed; train and test corpora use different derived seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub train_conversations: usize,
    pub test_conversations: usize,
    pub predator_fraction: f64,
    pub mean_length: f64,
    pub max_length: usize,
    pub marker_density: f64,
    pub victim_marker_density: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthSpec::default();
        Self {
            train_conversations: s.n_conversations,
            test_conversations: s.n_conversations,
            predator_fraction: s.predator_fraction,
            mean_length: s.mean_length,
            max_length: s.max_length,
            marker_density: s.marker_density,
            victim_marker_density: s.victim_marker_density,
        }
    }
}

impl SynthSection {
    pub fn spec(&self, seed: u64, n_conversations: usize) -> SynthSpec {
        SynthSpec {
            seed,
            n_conversations,
            predator_fraction: self.predator_fraction,
            mean_length: self.mean_length,
            max_length: self.max_length,
            marker_density: self.marker_density,
            victim_marker_density: self.victim_marker_density,
            ..SynthSpec::default()
        }
    }
}

fn positive(x: f64) -> Option<f64> {
    (x > 0.0).then_some(x)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsSection,
    pub preprocess: PreprocessSection,
    pub lm: LmSection,
    pub scd: ScdSection,
    pub author: AuthorSection,
    pub synth: SynthSection,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Disables LSTM biases and padding masks.
    pub fn apply_strict_paper(&mut self) {
        self.lm.bias = false;
        self.scd.bias = false;
        self.scd.masked = false;
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.preprocess.min_tf == 0
            || self.preprocess.max_sentence_len == 0
            || self.preprocess.long_word_limit == 0
        {
            return bad("preprocess.min_tf, max_sentence_len and long_word_limit must be positive");
        }
        if self.lm.embed_dim == 0
            || self.lm.hidden_dim == 0
            || self.lm.window == 0
            || self.lm.batch == 0
        {
            return bad("lm dimensions, window and batch must be positive");
        }
        if self.scd.hidden_dim == 0 || self.scd.chunk_len == 0 || self.scd.batch == 0 {
            return bad("scd.hidden_dim, chunk_len and batch must be positive");
        }
        if !(0.0..=1.0).contains(&self.scd.threshold) {
            return bad("scd.threshold must lie in [0, 1]");
        }
        for f in [self.lm.validation_fraction, self.scd.validation_fraction] {
            if !(0.0..1.0).contains(&f) {
                return bad("validation fractions must lie in [0, 1)");
            }
        }
        if self.author.dim == 0 {
            return bad("author.dim must be positive");
        }
        for lr in [self.lm.lr, self.scd.lr, self.author.lr] {
            if !lr.is_finite() || lr <= 0.0 {
                return bad("learning rates must be positive");
            }
        }
        Ok(())
    }

    fn rng(&self, stage: &str) -> Rng {
        Rng::new(derive_seed(self.seed, stage))
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.paths.out_dir.join(name)
    }
}

pub mod artifacts {
    pub const TRAIN_XML: &str = "train.xml";
    pub const TEST_XML: &str = "test.xml";
    pub const TRAIN_TRUTH: &str = "train_truth.txt";
    pub const TEST_TRUTH: &str = "test_truth.txt";
    pub const FILTER_REPORT: &str = "filter_report.txt";
    pub const VOCAB: &str = "vocab.txt";
    pub const LM: &str = "lm.bin";
    pub const LM_LOG: &str = "lm_log.txt";
    pub const LM_EVAL: &str = "lm_eval.txt";
    pub const TRAIN_VECTORS: &str = "train_vectors.bin";
    pub const TEST_VECTORS: &str = "test_vectors.bin";
    pub const SCD: &str = "scd.bin";
    pub const SCD_LOG: &str = "scd_log.txt";
    pub const SCD_VERDICTS: &str = "scd_verdicts.tsv";
    pub const SCD_EVAL: &str = "scd_eval.txt";
    pub const AUTHOR: &str = "author.bin";
    pub const AUTHOR_LOG: &str = "author_log.txt";
    pub const AUTHOR_SCORES: &str = "author_scores.tsv";
    pub const PREDATORS: &str = "predators.txt";
    pub const REPORT: &str = "report.txt";
    pub const SYNTH_TRAIN_XML: &str = "synth_train.xml";
    pub const SYNTH_TRAIN_TRUTH: &str = "synth_train_truth.txt";
    pub const SYNTH_TEST_XML: &str = "synth_test.xml";
    pub const SYNTH_TEST_TRUTH: &str = "synth_test_truth.txt";
}

use artifacts as art;

/// Path of an artifact that an earlier stage must have produced.
fn require(cfg: &PipelineConfig, name: &str, producer: &str) -> Result<PathBuf> {
    let p = cfg.artifact(name);
    if p.is_file() {
        Ok(p)
    } else {
        Err(Error::usage(format!(
            "missing {}; run `{producer}` first",
            p.display()
        )))
    }
}

fn write_artifact(cfg: &PipelineConfig, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    let dir = &cfg.paths.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = cfg.artifact(name);
    fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
    Ok(p)
}

fn save_model<M: store::Persist>(cfg: &PipelineConfig, name: &str, model: &M) -> Result<PathBuf> {
    let dir = &cfg.paths.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = cfg.artifact(name);
    store::save(model, &p)?;
    Ok(p)
}

fn read_corpus(path: &Path) -> Result<Vec<Conversation>> {
    let parsed = read_pan_corpus(path)?;
    for r in &parsed.skipped {
        log::warn!("{}: skipped record: {r}", path.display());
    }
    Ok(parsed.conversations)
}

fn corpus_lines(convs: &[Conversation]) -> impl Iterator<Item = Vec<String>> + '_ {
    convs
        .iter()
        .flat_map(|c| c.messages.iter().map(|m| tokenize(&m.text)))
}

/// Labelled preprocessed corpus for a split, if the split has ground truth.
fn load_split(
    cfg: &PipelineConfig,
    xml: &str,
    truth: &str,
) -> Result<(Vec<Conversation>, Option<BTreeSet<String>>)> {
    let convs = read_corpus(&require(cfg, xml, "preprocess")?)?;
    let tp = cfg.artifact(truth);
    let truth = if tp.is_file() {
        Some(read_ground_truth(&tp)?)
    } else {
        None
    };
    Ok((convs, truth))
}

fn has_test(cfg: &PipelineConfig) -> bool {
    cfg.artifact(art::TEST_XML).is_file()
}

/// Normalizes, labels and filters the raw corpora.
pub fn preprocess(cfg: &PipelineConfig) -> Result<String> {
    let p = &cfg.preprocess;
    let rules = NormRuleSet::with_files(
        p.abbreviations.as_deref(),
        p.emoticons.as_deref(),
        p.long_word_limit,
    )?;
    let train_corpus = cfg
        .paths
        .train_corpus
        .as_ref()
        .ok_or_else(|| Error::Config("paths.train_corpus is not set".into()))?;
    let train_truth = cfg
        .paths
        .train_truth
        .as_ref()
        .ok_or_else(|| Error::Config("paths.train_truth is not set".into()))?;
    let mut splits = vec![(
        "train",
        train_corpus,
        Some(train_truth),
        art::TRAIN_XML,
        art::TRAIN_TRUTH,
    )];
    if let Some(tc) = &cfg.paths.test_corpus {
        splits.push((
            "test",
            tc,
            cfg.paths.test_truth.as_ref(),
            art::TEST_XML,
            art::TEST_TRUTH,
        ));
    }

    let mut report = String::new();
    for (name, corpus, truth_path, xml_out, truth_out) in splits {
        let truth = match truth_path {
            Some(t) => read_ground_truth(t)?,
            None => BTreeSet::new(),
        };
        let normalized: Vec<Conversation> = read_corpus(corpus)?
            .iter()
            .map(|c| normalize_conversation(c, &rules))
            .collect();
        let (kept, counts) = filter_corpus(label_conversations(normalized, &truth), &truth);
        let convs: Vec<Conversation> = kept.into_iter().map(|lc| lc.conversation).collect();
        let mut xml = Vec::new();
        write_pan_corpus(&convs, &mut xml).map_err(|e| Error::io(cfg.artifact(xml_out), e))?;
        write_artifact(cfg, xml_out, &xml)?;
        if truth_path.is_some() {
            let mut t = Vec::new();
            write_ground_truth(&truth, &mut t)
                .map_err(|e| Error::io(cfg.artifact(truth_out), e))?;
            write_artifact(cfg, truth_out, &t)?;
        } else {
            let stale = cfg.artifact(truth_out);
            if stale.is_file() {
                fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
            }
        }
        report.push_str(&format!("[{name}]\n{counts}"));
    }
    write_artifact(cfg, art::FILTER_REPORT, report.as_bytes())?;
    Ok(report)
}

fn write_vocab(v: &Vocabulary) -> String {
    let mut s = format!("#min_tf={}\n", v.min_term_frequency());
    for t in v.tokens() {
        s.push_str(t);
        s.push('\n');
    }
    s
}

fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let min_tf = lines
        .next()
        .and_then(|l| l.strip_prefix("#min_tf="))
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| Error::Format(format!("{}: missing #min_tf header", path.display())))?;
    Vocabulary::from_token_list(lines.map(String::from).collect(), min_tf)
}

/// Builds the vocabulary over the training corpus; each conversation is one
/// document for the idf term.
pub fn build_vocab(cfg: &PipelineConfig) -> Result<String> {
    let convs = read_corpus(&require(cfg, art::TRAIN_XML, "preprocess")?)?;
    let docs: Vec<Vec<String>> = convs
        .iter()
        .map(|c| c.messages.iter().flat_map(|m| tokenize(&m.text)).collect())
        .collect();
    let v = build_vocabulary(&docs, cfg.preprocess.min_tf)?;
    write_artifact(cfg, art::VOCAB, write_vocab(&v).as_bytes())?;
    Ok(format!(
        "vocabulary: {} entries (min_tf {})\n",
        v.len(),
        cfg.preprocess.min_tf
    ))
}

/// Every message as its own encoded document.
fn encode_messages(convs: &[Conversation], vocab: &Vocabulary, max_len: usize) -> Vec<Vec<usize>> {
    corpus_lines(convs)
        .map(|t| encode(&t, vocab, max_len))
        .collect()
}

pub fn train_language_model(cfg: &PipelineConfig) -> Result<String> {
    let vocab = read_vocab(&require(cfg, art::VOCAB, "build-vocab")?)?;
    let convs = read_corpus(&require(cfg, art::TRAIN_XML, "preprocess")?)?;
    let mut docs = encode_messages(&convs, &vocab, cfg.preprocess.max_sentence_len);
    let mut split_rng = cfg.rng("lm-split");
    split_rng.shuffle(&mut docs);
    let n_val = (docs.len() as f64 * cfg.lm.validation_fraction).round() as usize;
    let validation = docs.split_off(docs.len() - n_val);

    let mut model = LanguageModel::<f32>::new(vocab, &cfg.lm.model(), &mut cfg.rng("lm-init"));
    let log = train_lm(
        &mut model,
        &docs,
        &validation,
        &cfg.lm.train(),
        &mut cfg.rng("lm-train"),
    )?;
    let text: String = log.iter().map(|e| format!("{e}\n")).collect();
    write_artifact(cfg, art::LM_LOG, text.as_bytes())?;
    save_model(cfg, art::LM, &model)?;
    Ok(text)
}

pub fn eval_language_model(cfg: &PipelineConfig) -> Result<String> {
    let model: LanguageModel<f32> = store::load(&require(cfg, art::LM, "train-lm")?)?;
    let convs = read_corpus(&require(cfg, art::TEST_XML, "preprocess")?)?;
    let docs = encode_messages(&convs, &model.vocab, cfg.preprocess.max_sentence_len);
    let ppl = perplexity(&model, &docs)?;
    let text = format!("perplexity={ppl:.6}\n");
    write_artifact(cfg, art::LM_EVAL, text.as_bytes())?;
    Ok(text)
}

fn vectorize_split(
    cfg: &PipelineConfig,
    lm: &LanguageModel<f32>,
    xml: &str,
    truth: &str,
) -> Result<Vec<ConversationSequence<f32>>> {
    let (convs, truth) = load_split(cfg, xml, truth)?;
    Ok(convs
        .iter()
        .filter_map(|c| {
            let label = truth
                .as_ref()
                .map(|t| c.messages.iter().any(|m| t.contains(&m.author)));
            vectorize_conversation(c, label, lm, cfg.preprocess.max_sentence_len)
        })
        .collect())
}

pub fn vectorize(cfg: &PipelineConfig) -> Result<String> {
    let lm: LanguageModel<f32> = store::load(&require(cfg, art::LM, "train-lm")?)?;
    let mut summary = String::new();
    let mut splits = vec![(art::TRAIN_XML, art::TRAIN_TRUTH, art::TRAIN_VECTORS)];
    if has_test(cfg) {
        splits.push((art::TEST_XML, art::TEST_TRUTH, art::TEST_VECTORS));
    }
    for (xml, truth, out) in splits {
        let seqs = vectorize_split(cfg, &lm, xml, truth)?;
        save_model(cfg, out, &seqs)?;
        summary.push_str(&format!("{out}: {} conversations\n", seqs.len()));
    }
    Ok(summary)
}

/// Stratified hold-out of whole conversations.
fn split_sequences(
    seqs: Vec<ConversationSequence<f32>>,
    fraction: f64,
    rng: &mut Rng,
) -> (
    Vec<ConversationSequence<f32>>,
    Vec<ConversationSequence<f32>>,
) {
    let (mut pos, mut neg): (Vec<_>, Vec<_>) =
        seqs.into_iter().partition(|s| s.label == Some(true));
    let mut train = Vec::new();
    let mut val = Vec::new();
    for group in [&mut pos, &mut neg] {
        rng.shuffle(group);
        let n_val =
            ((group.len() as f64 * fraction).round() as usize).min(group.len().saturating_sub(1));
        val.extend(group.drain(..n_val));
        train.append(group);
    }
    (train, val)
}

pub fn train_conversation_classifier(cfg: &PipelineConfig) -> Result<String> {
    let seqs: Vec<ConversationSequence<f32>> =
        store::load(&require(cfg, art::TRAIN_VECTORS, "vectorize")?)?;
    if seqs.iter().any(|s| s.label.is_none()) {
        return Err(Error::usage(
            "training vectors are unlabelled; preprocess needs paths.train_truth",
        ));
    }
    let dim = seqs
        .first()
        .map(|s| s.vectors.cols())
        .ok_or_else(|| Error::usage("no training conversations"))?;
    let (train, val) =
        split_sequences(seqs, cfg.scd.validation_fraction, &mut cfg.rng("scd-split"));
    let chunks = |s: &[ConversationSequence<f32>]| -> Result<Vec<_>> {
        let mut out = Vec::new();
        for seq in s {
            out.extend(chunk_and_pad(seq, cfg.scd.chunk_len)?);
        }
        Ok(out)
    };
    let (train_chunks, val_chunks) = (chunks(&train)?, chunks(&val)?);
    let mut model = ScdModel::<f32>::new(dim, &cfg.scd.model(), &mut cfg.rng("scd-init"));
    let result = train_scd(
        &mut model,
        &train_chunks,
        &val_chunks,
        &cfg.scd.train(),
        &mut cfg.rng("scd-train"),
    )?;
    let mut text: String = result.log.iter().map(|e| format!("{e}\n")).collect();
    if let Some(b) = result.best_epoch {
        text.push_str(&format!("best_epoch={b}\n"));
    }
    write_artifact(cfg, art::SCD_LOG, text.as_bytes())?;
    save_model(cfg, art::SCD, &model)?;
    Ok(text)
}

fn counts_summary(name: &str, c: &ConfusionCounts) -> String {
    let report = MetricsReport {
        rows: vec![ReportRow::new(name, *c)],
    };
    format!("tp={} fp={} tn={} fn={}\n{report}", c.tp, c.fp, c.tn, c.fn_)
}

pub fn eval_conversation_classifier(cfg: &PipelineConfig) -> Result<String> {
    let model: ScdModel<f32> = store::load(&require(cfg, art::SCD, "train-scd")?)?;
    let seqs: Vec<ConversationSequence<f32>> =
        store::load(&require(cfg, art::TEST_VECTORS, "vectorize")?)?;
    let verdicts = classify_sequences(&model, &seqs, cfg.scd.threshold)?;
    let mut buf = Vec::new();
    write_verdicts(&verdicts, &mut buf)
        .map_err(|e| Error::io(cfg.artifact(art::SCD_VERDICTS), e))?;
    write_artifact(cfg, art::SCD_VERDICTS, &buf)?;
    let positives = verdicts.iter().filter(|v| v.positive).count();
    let mut text = format!("{positives} of {} conversations flagged\n", verdicts.len());
    if seqs.iter().all(|s| s.label.is_some()) {
        let c = ConfusionCounts::from_pairs(
            verdicts
                .iter()
                .zip(&seqs)
                .map(|(v, s)| (v.positive, s.label == Some(true))),
        );
        text.push_str(&counts_summary("conversations", &c));
    }
    write_artifact(cfg, art::SCD_EVAL, text.as_bytes())?;
    Ok(text)
}

fn labeled(convs: Vec<Conversation>, truth: &BTreeSet<String>) -> Vec<LabeledConversation> {
    label_conversations(convs, truth)
}

pub fn train_author_model(cfg: &PipelineConfig) -> Result<String> {
    let (convs, truth) = load_split(cfg, art::TRAIN_XML, art::TRAIN_TRUTH)?;
    let truth = truth
        .ok_or_else(|| Error::usage("missing training ground truth; run `preprocess` first"))?;
    let lc = labeled(convs, &truth);
    let roles = assign_author_roles(&lc, &truth);
    let units = author_units(&lc, Some(&roles));
    let lines: Vec<Vec<Vec<String>>> = units.iter().map(|u| u.lines.clone()).collect();
    let fv = build_feature_vocab(&lines, cfg.author.min_feature_freq, cfg.author.bigrams);
    if fv.is_empty() {
        return Err(Error::usage(
            "no author features survive the minimum frequency",
        ));
    }
    let mut model = ShallowModel::<f32>::new(fv, cfg.author.dim, &mut cfg.rng("author-init"));
    let log = train_author(
        &mut model,
        &units,
        &cfg.author.train(),
        &mut cfg.rng("author-train"),
    )?;
    let text: String = log
        .iter()
        .map(|e| {
            format!(
                "epoch={} loss={:.6} train_acc={:.4}\n",
                e.epoch, e.mean_loss, e.accuracy
            )
        })
        .collect();
    write_artifact(cfg, art::AUTHOR_LOG, text.as_bytes())?;
    save_model(cfg, art::AUTHOR, &model)?;
    Ok(text)
}

pub fn score_test_authors(cfg: &PipelineConfig) -> Result<String> {
    let model: ShallowModel<f32> = store::load(&require(cfg, art::AUTHOR, "train-author")?)?;
    let convs = read_corpus(&require(cfg, art::TEST_XML, "preprocess")?)?;
    let lc = labeled(convs, &BTreeSet::new());
    let verdicts = score_authors(&model, &author_units(&lc, None))?;
    let mut buf = Vec::new();
    write_scores(&verdicts, &mut buf)
        .map_err(|e| Error::io(cfg.artifact(art::AUTHOR_SCORES), e))?;
    write_artifact(cfg, art::AUTHOR_SCORES, &buf)?;
    Ok(format!("{} authors scored\n", verdicts.len()))
}

pub fn identify(cfg: &PipelineConfig) -> Result<String> {
    let verdicts = {
        let p = require(cfg, art::SCD_VERDICTS, "eval-scd")?;
        read_verdicts(BufReader::new(
            fs::File::open(&p).map_err(|e| Error::io(&p, e))?,
        ))?
    };
    let mut scores = {
        let p = require(cfg, art::AUTHOR_SCORES, "score-authors")?;
        read_scores(BufReader::new(
            fs::File::open(&p).map_err(|e| Error::io(&p, e))?,
        ))?
    };
    let (convs, truth) = load_split(cfg, art::TEST_XML, art::TEST_TRUTH)?;
    let suspicious: BTreeSet<String> = verdicts
        .iter()
        .filter(|v| v.positive)
        .map(|v| v.conversation.clone())
        .collect();
    let found = identify_predators(&suspicious, &scores, &convs);
    for a in &found.anomalies {
        log::warn!("suspicious conversation {a} has no scored participants");
    }
    mark_flagged(&mut scores, &found.predators);

    let mut buf = Vec::new();
    write_ground_truth(&found.predators, &mut buf)
        .map_err(|e| Error::io(cfg.artifact(art::PREDATORS), e))?;
    write_artifact(cfg, art::PREDATORS, &buf)?;

    let mut text = format!(
        "suspicious conversations: {}\npredators identified: {}\n",
        suspicious.len(),
        found.predators.len()
    );
    if let Some(truth) = truth {
        let lc = labeled(convs, &truth);
        let conv_truth: BTreeSet<String> = lc
            .iter()
            .filter(|l| l.positive)
            .map(|l| l.conversation.id.clone())
            .collect();
        let conv_universe: BTreeSet<String> = lc
            .iter()
            .map(|l| l.conversation.id.clone())
            .chain(suspicious.iter().cloned())
            .collect();
        let mut authors: BTreeSet<String> = lc
            .iter()
            .flat_map(|l| l.conversation.participants().into_iter().map(String::from))
            .collect();
        authors.extend(truth.iter().cloned());
        let report = MetricsReport {
            rows: vec![
                ReportRow::new(
                    "conversations",
                    confusion(&suspicious, &conv_truth, &conv_universe)?,
                ),
                ReportRow::new("predators", confusion(&found.predators, &truth, &authors)?),
            ],
        };
        text.push_str(&report.to_string());
    }
    write_artifact(cfg, art::REPORT, text.as_bytes())?;
    Ok(text)
}

/// Writes synthetic train and test corpora with their ground truth.
pub fn synth(cfg: &PipelineConfig) -> Result<String> {
    let s = &cfg.synth;
    let mut text = String::new();
    for (stage, n, xml, truth) in [
        (
            "synth-train",
            s.train_conversations,
            art::SYNTH_TRAIN_XML,
            art::SYNTH_TRAIN_TRUTH,
        ),
        (
            "synth-test",
            s.test_conversations,
            art::SYNTH_TEST_XML,
            art::SYNTH_TEST_TRUTH,
        ),
    ] {
        let corpus = generate(&s.spec(derive_seed(cfg.seed, stage), n))?;
        write_artifact(cfg, xml, &corpus.xml())?;
        write_artifact(cfg, truth, &corpus.ground_truth())?;
        text.push_str(&format!(
            "{xml}: {} conversations, {} predators\n",
            corpus.conversations.len(),
            corpus.predators.len()
        ));
    }
    Ok(text)
}

/// Outcome of [`review_experiment`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReviewOutcome {
    pub train_reviews: usize,
    pub counts: ConfusionCounts,
    pub accuracy: f64,
}

/// A review as a pseudo-conversation: one message per sentence, split after
/// `.`, `!` and `?` tokens.
fn review_conversation(id: String, text: &str, rules: &NormRuleSet) -> Conversation {
    let text = text.replace("<br />", " ");
    let tokens = tokenize(&crate::preprocess::normalize_text(&text, rules));
    let mut messages = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let flush = |current: &mut Vec<String>, messages: &mut Vec<Message>| {
        if !current.is_empty() {
            messages.push(Message {
                author: "reviewer".into(),
                line_no: messages.len() + 1,
                time: String::new(),
                text: current.join(" "),
            });
            current.clear();
        }
    };
    for t in tokens {
        let end = matches!(t.as_str(), "." | "!" | "?");
        current.push(t);
        if end {
            flush(&mut current, &mut messages);
        }
    }
    flush(&mut current, &mut messages);
    Conversation { id, messages }
}

/// `per_class` reviews of each label, drawn reproducibly.
fn review_subset(
    root: &Path,
    per_class: usize,
    rng: &mut Rng,
    split: &str,
    rules: &NormRuleSet,
) -> Result<Vec<(Conversation, bool)>> {
    let mut all = load_review_tree(root)?;
    rng.shuffle(&mut all);
    let mut out = Vec::new();
    for label in [ReviewLabel::Pos, ReviewLabel::Neg] {
        let picked: Vec<&(String, ReviewLabel)> = all
            .iter()
            .filter(|(_, l)| *l == label)
            .take(per_class)
            .collect();
        if picked.len() < per_class {
            return Err(Error::usage(format!(
                "{} has {} {label:?} reviews, {per_class} requested",
                root.display(),
                picked.len()
            )));
        }
        for (i, (text, _)) in picked.into_iter().enumerate() {
            let id = format!("{split}-{label:?}-{i}");
            out.push((
                review_conversation(id, text, rules),
                label == ReviewLabel::Pos,
            ));
        }
    }
    Ok(out)
}

/// Sentiment classification of movie reviews with the same language model
/// and sequence classifier: `root/train` and `root/test` are review trees.
/// Positive reviews play the role of positive conversations.
pub fn review_experiment(
    cfg: &PipelineConfig,
    root: &Path,
    per_class: usize,
) -> Result<ReviewOutcome> {
    let p = &cfg.preprocess;
    let rules = NormRuleSet::with_files(
        p.abbreviations.as_deref(),
        p.emoticons.as_deref(),
        p.long_word_limit,
    )?;
    let mut rng = cfg.rng("review-subset");
    let train = review_subset(&root.join("train"), per_class, &mut rng, "train", &rules)?;
    let test = review_subset(&root.join("test"), per_class, &mut rng, "test", &rules)?;

    let docs: Vec<Vec<String>> = train
        .iter()
        .map(|(c, _)| c.messages.iter().flat_map(|m| tokenize(&m.text)).collect())
        .collect();
    let vocab = build_vocabulary(&docs, p.min_tf)?;
    let convs: Vec<Conversation> = train.iter().map(|(c, _)| c.clone()).collect();
    let mut sentences = encode_messages(&convs, &vocab, p.max_sentence_len);
    cfg.rng("lm-split").shuffle(&mut sentences);
    let n_val = (sentences.len() as f64 * cfg.lm.validation_fraction).round() as usize;
    let validation = sentences.split_off(sentences.len() - n_val);
    let mut lm = LanguageModel::<f32>::new(vocab, &cfg.lm.model(), &mut cfg.rng("lm-init"));
    train_lm(
        &mut lm,
        &sentences,
        &validation,
        &cfg.lm.train(),
        &mut cfg.rng("lm-train"),
    )?;

    let vectorize = |set: &[(Conversation, bool)]| -> Vec<ConversationSequence<f32>> {
        set.iter()
            .filter_map(|(c, y)| vectorize_conversation(c, Some(*y), &lm, p.max_sentence_len))
            .collect()
    };
    let (train_seqs, test_seqs) = (vectorize(&train), vectorize(&test));
    let dim = lm.hidden_dim();
    let (fit, val) = split_sequences(
        train_seqs,
        cfg.scd.validation_fraction,
        &mut cfg.rng("scd-split"),
    );
    let chunks = |s: &[ConversationSequence<f32>]| -> Result<Vec<_>> {
        let mut out = Vec::new();
        for seq in s {
            out.extend(chunk_and_pad(seq, cfg.scd.chunk_len)?);
        }
        Ok(out)
    };
    let mut model = ScdModel::<f32>::new(dim, &cfg.scd.model(), &mut cfg.rng("scd-init"));
    train_scd(
        &mut model,
        &chunks(&fit)?,
        &chunks(&val)?,
        &cfg.scd.train(),
        &mut cfg.rng("scd-train"),
    )?;
    let verdicts = classify_sequences(&model, &test_seqs, cfg.scd.threshold)?;
    let counts = ConfusionCounts::from_pairs(
        verdicts
            .iter()
            .zip(&test_seqs)
            .map(|(v, s)| (v.positive, s.label == Some(true))),
    );
    Ok(ReviewOutcome {
        train_reviews: train.len(),
        counts,
        accuracy: accuracy(&counts)?,
    })
}

/// One named stage, in pipeline order.
pub type Stage = fn(&PipelineConfig) -> Result<String>;

pub const STAGES: [(&str, Stage); 10] = [
    ("preprocess", preprocess),
    ("build-vocab", build_vocab),
    ("train-lm", train_language_model),
    ("eval-lm", eval_language_model),
    ("vectorize", vectorize),
    ("train-scd", train_conversation_classifier),
    ("eval-scd", eval_conversation_classifier),
    ("train-author", train_author_model),
    ("score-authors", score_test_authors),
    ("identify", identify),
];

/// Runs every stage in order. Stages that need a test corpus are skipped
/// when none is configured. Returns the final report.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<String> {
    let needs_test = ["eval-lm", "eval-scd", "score-authors", "identify"];
    let mut last = String::new();
    for (name, stage) in STAGES {
        if needs_test.contains(&name) && cfg.paths.test_corpus.is_none() {
            log::info!("skipping {name}: no test corpus configured");
            continue;
        }
        log::info!("stage {name}");
        last = stage(cfg)?;
    }
    Ok(last)
}
