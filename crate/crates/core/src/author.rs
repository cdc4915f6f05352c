//! Shallow author classifier: averaged unigram and bigram embeddings, a linear
//! map and a softmax over predator / victim / normal, plus per-author score
//! averaging and the predator decision rule.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, LabeledConversation};
use crate::error::{Error, Result};
use crate::math::{
    outer_acc, softmax_in_place, vec_mat_acc, vec_mat_t_acc, ParamSet, Real, Rng, Tensor2,
};

pub const NUM_CLASSES: usize = 3;
pub const DEFAULT_MIN_FEATURE_FREQUENCY: usize = 5;

/// Output classes in model order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AuthorClass {
    Predator,
    Victim,
    Normal,
}

impl AuthorClass {
    pub const ALL: [AuthorClass; 3] = [
        AuthorClass::Predator,
        AuthorClass::Victim,
        AuthorClass::Normal,
    ];

    pub fn index(self) -> usize {
        match self {
            AuthorClass::Predator => 0,
            AuthorClass::Victim => 1,
            AuthorClass::Normal => 2,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            AuthorClass::Predator => "P",
            AuthorClass::Victim => "V",
            AuthorClass::Normal => "N",
        }
    }

    /// Precedence when one author receives several roles across conversations.
    pub(crate) fn training_priority(self) -> u8 {
        match self {
            AuthorClass::Predator => 2,
            AuthorClass::Victim => 1,
            AuthorClass::Normal => 0,
        }
    }
}

impl fmt::Display for AuthorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for AuthorClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "P" => Ok(AuthorClass::Predator),
            "V" => Ok(AuthorClass::Victim),
            "N" => Ok(AuthorClass::Normal),
            other => Err(Error::Format(format!("unknown author class {other:?}"))),
        }
    }
}

/// Probability triple over (predator, victim, normal).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SentimentScore {
    pub p: f64,
    pub v: f64,
    pub n: f64,
}

impl SentimentScore {
    pub fn from_probs(probs: [f64; 3]) -> Self {
        Self {
            p: probs[0],
            v: probs[1],
            n: probs[2],
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.p, self.v, self.n]
    }

    /// Highest-scoring class; exact ties resolve toward `Normal`, then `Victim`.
    pub fn argmax(&self) -> AuthorClass {
        let mut best = AuthorClass::Normal;
        for c in [AuthorClass::Victim, AuthorClass::Predator] {
            if self.as_array()[c.index()] > self.as_array()[best.index()] {
                best = c;
            }
        }
        best
    }
}

/// Component-wise mean of one author's per-conversation scores, renormalized
/// to sum to one.
pub fn average_author_scores(scores: &[SentimentScore]) -> Result<SentimentScore> {
    if scores.is_empty() {
        return Err(Error::usage("cannot average an empty score list"));
    }
    let n = scores.len() as f64;
    let mut acc = [0.0f64; 3];
    for s in scores {
        for (a, v) in acc.iter_mut().zip(s.as_array()) {
            *a += v;
        }
    }
    let total: f64 = acc.iter().sum::<f64>() / n;
    Ok(SentimentScore::from_probs(acc.map(|a| a / n / total)))
}

/// Unigram and adjacent-bigram feature index. Bigrams are keyed as
/// `"left right"`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureVocab {
    features: Vec<String>,
    index: HashMap<String, usize>,
    bigrams: bool,
}

impl FeatureVocab {
    pub fn from_features(features: Vec<String>, bigrams: bool) -> Result<Self> {
        let mut index = HashMap::with_capacity(features.len());
        for (i, f) in features.iter().enumerate() {
            if index.insert(f.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate feature {f:?}")));
            }
        }
        Ok(Self {
            features,
            index,
            bigrams,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn uses_bigrams(&self) -> bool {
        self.bigrams
    }

    pub fn index_of(&self, feature: &str) -> Option<usize> {
        self.index.get(feature).copied()
    }

    /// Feature indices present in `lines`, with multiplicity. Bigrams never
    /// span two lines.
    pub fn feature_ids<S: AsRef<str>>(&self, lines: &[Vec<S>]) -> Vec<usize> {
        let mut ids = Vec::new();
        for line in lines {
            ids.extend(line.iter().filter_map(|t| self.index_of(t.as_ref())));
            if self.bigrams {
                let mut key = String::new();
                for w in line.windows(2) {
                    key.clear();
                    key.push_str(w[0].as_ref());
                    key.push(' ');
                    key.push_str(w[1].as_ref());
                    if let Some(i) = self.index_of(&key) {
                        ids.push(i);
                    }
                }
            }
        }
        ids
    }
}

/// Counts unigram (and bigram) occurrences over all units and keeps those
/// seen at least `min_freq` times, most frequent first, ties lexicographic.
pub fn build_feature_vocab<S: AsRef<str>>(
    units: &[Vec<Vec<S>>],
    min_freq: usize,
    bigrams: bool,
) -> FeatureVocab {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for unit in units {
        for line in unit {
            for t in line {
                *counts.entry(t.as_ref().to_string()).or_default() += 1;
            }
            if bigrams {
                for w in line.windows(2) {
                    *counts
                        .entry(format!("{} {}", w[0].as_ref(), w[1].as_ref()))
                        .or_default() += 1;
                }
            }
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_freq.max(1))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    FeatureVocab::from_features(kept.into_iter().map(|(f, _)| f).collect(), bigrams)
        .expect("unique keys")
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuthorWeights<T> {
    pub embedding: Tensor2<T>,
    pub class_w: Tensor2<T>,
    pub class_b: Tensor2<T>,
}

impl<T: Real> ParamSet<T> for AuthorWeights<T> {
    fn tensors(&self) -> Vec<&Tensor2<T>> {
        vec![&self.embedding, &self.class_w, &self.class_b]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2<T>> {
        vec![&mut self.embedding, &mut self.class_w, &mut self.class_b]
    }
}

impl<T: Real> AuthorWeights<T> {
    pub fn cast<U: Real>(&self) -> AuthorWeights<U> {
        AuthorWeights {
            embedding: self.embedding.cast(),
            class_w: self.class_w.cast(),
            class_b: self.class_b.cast(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShallowModel<T> {
    pub features: FeatureVocab,
    pub weights: AuthorWeights<T>,
}

impl<T: Real> ShallowModel<T> {
    pub fn new(features: FeatureVocab, dim: usize, rng: &mut Rng) -> Self {
        let f = features.len();
        let weights = AuthorWeights {
            embedding: Tensor2::uniform(f, dim, dim, rng),
            class_w: Tensor2::uniform(dim, NUM_CLASSES, dim, rng),
            class_b: Tensor2::zeros(1, NUM_CLASSES),
        };
        Self { features, weights }
    }

    pub fn dim(&self) -> usize {
        self.weights.embedding.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.dim();
        let w = &self.weights;
        if w.embedding.rows() != self.features.len() {
            return Err(Error::shape(
                "author embedding",
                format!("{} features", self.features.len()),
                w.embedding.shape_str(),
            ));
        }
        if w.class_w.shape() != (k, NUM_CLASSES) || w.class_b.shape() != (1, NUM_CLASSES) {
            return Err(Error::shape(
                "author classifier",
                format!("{k}x{NUM_CLASSES}"),
                format!("{} / {}", w.class_w.shape_str(), w.class_b.shape_str()),
            ));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ShallowModel<U> {
        ShallowModel {
            features: self.features.clone(),
            weights: self.weights.cast(),
        }
    }

    fn mean_embedding(&self, ids: &[usize]) -> Vec<T> {
        let k = self.dim();
        let mut h = vec![T::zero(); k];
        if ids.is_empty() {
            return h;
        }
        for &i in ids {
            for (a, &e) in h.iter_mut().zip(self.weights.embedding.row(i)) {
                *a += e;
            }
        }
        let inv = T::one() / T::lit(ids.len() as f64);
        h.iter_mut().for_each(|a| *a *= inv);
        h
    }

    /// Mean embedding of every in-vocabulary unigram and bigram occurrence in
    /// `lines`; all-OOV input yields the zero vector.
    pub fn featurize<S: AsRef<str>>(&self, lines: &[Vec<S>]) -> Result<Vec<T>> {
        if lines.iter().all(Vec::is_empty) {
            return Err(Error::usage("featurize needs at least one token"));
        }
        Ok(self.mean_embedding(&self.features.feature_ids(lines)))
    }

    fn probs(&self, features: &[T]) -> Vec<T> {
        let mut z = self.weights.class_b.as_slice().to_vec();
        vec_mat_acc(features, &self.weights.class_w, &mut z);
        softmax_in_place(&mut z);
        z
    }

    /// `softmax(features * class_w + class_b)` as a (p, v, n) triple.
    pub fn score(&self, features: &[T]) -> Result<SentimentScore> {
        if features.len() != self.dim() {
            return Err(Error::shape(
                "score",
                format!("dim {}", self.dim()),
                format!("{} features", features.len()),
            ));
        }
        let p = self.probs(features);
        Ok(SentimentScore::from_probs([
            p[0].as_f64(),
            p[1].as_f64(),
            p[2].as_f64(),
        ]))
    }

    pub fn score_lines<S: AsRef<str>>(&self, lines: &[Vec<S>]) -> Result<SentimentScore> {
        self.score(&self.featurize(lines)?)
    }

    /// Cross-entropy of one unit and its dense gradient.
    pub fn loss_and_grad<S: AsRef<str>>(
        &self,
        lines: &[Vec<S>],
        label: AuthorClass,
    ) -> (T, AuthorWeights<T>) {
        let ids = self.features.feature_ids(lines);
        let (loss, sparse) = self.unit_gradient(&ids, label);
        let mut g = AuthorWeights {
            embedding: Tensor2::zeros(self.weights.embedding.rows(), self.dim()),
            class_w: sparse.class_w,
            class_b: sparse.class_b,
        };
        for &i in &ids {
            for (a, &d) in g.embedding.row_mut(i).iter_mut().zip(&sparse.d_mean) {
                *a += d;
            }
        }
        (loss, g)
    }

    fn unit_gradient(&self, ids: &[usize], label: AuthorClass) -> (T, SparseGrad<T>) {
        let h = self.mean_embedding(ids);
        let p = self.probs(&h);
        let loss = -p[label.index()].max(T::lit(crate::math::LOG_EPSILON)).ln();
        let mut dz = p;
        dz[label.index()] -= T::one();
        let mut class_w = Tensor2::zeros(self.dim(), NUM_CLASSES);
        outer_acc(&mut class_w, &h, &dz);
        let mut dh = vec![T::zero(); self.dim()];
        vec_mat_t_acc(&dz, &self.weights.class_w, &mut dh);
        let scale = if ids.is_empty() {
            T::zero()
        } else {
            T::one() / T::lit(ids.len() as f64)
        };
        dh.iter_mut().for_each(|d| *d *= scale);
        (
            loss,
            SparseGrad {
                d_mean: dh,
                class_w,
                class_b: Tensor2::row_vector(&dz),
            },
        )
    }
}

/// Gradient of one unit: every feature occurrence receives `d_mean`.
struct SparseGrad<T> {
    d_mean: Vec<T>,
    class_w: Tensor2<T>,
    class_b: Tensor2<T>,
}

/// One (author, conversation) training or scoring unit.
#[derive(Clone, Debug, PartialEq)]
pub struct AuthorUnit {
    pub author: String,
    pub conversation: String,
    pub lines: Vec<Vec<String>>,
    pub label: Option<AuthorClass>,
}

/// Splits conversations into (author, conversation) units of tokenized lines.
pub fn author_units(
    labeled: &[LabeledConversation],
    roles: Option<&IndexMap<String, AuthorClass>>,
) -> Vec<AuthorUnit> {
    let mut units = Vec::new();
    for lc in labeled {
        let c = &lc.conversation;
        let mut by_author: IndexMap<&str, Vec<Vec<String>>> = IndexMap::new();
        for m in &c.messages {
            by_author
                .entry(m.author.as_str())
                .or_default()
                .push(crate::preprocess::tokenize(&m.text));
        }
        for (author, lines) in by_author {
            if lines.iter().all(Vec::is_empty) {
                continue;
            }
            units.push(AuthorUnit {
                author: author.to_string(),
                conversation: c.id.clone(),
                lines,
                label: roles.and_then(|r| r.get(author).copied()),
            });
        }
    }
    units
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuthorTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Linear decay of the learning rate to zero over training.
    pub lr_decay: bool,
    pub clip: Option<f64>,
    /// Oversample smaller classes to the size of the largest each epoch.
    pub balance_classes: bool,
}

impl Default for AuthorTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 0.2,
            lr_decay: true,
            clip: Some(5.0),
            balance_classes: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AuthorEpoch {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: f64,
}

/// Per-unit SGD on the three-class cross-entropy. Only embedding rows of
/// features present in a unit are touched by its update.
pub fn train_author<T: Real>(
    model: &mut ShallowModel<T>,
    units: &[AuthorUnit],
    config: &AuthorTrainConfig,
    rng: &mut Rng,
) -> Result<Vec<AuthorEpoch>> {
    let labeled: Vec<(Vec<usize>, AuthorClass)> = units
        .iter()
        .filter_map(|u| u.label.map(|l| (model.features.feature_ids(&u.lines), l)))
        .collect();
    for c in AuthorClass::ALL {
        if !labeled.iter().any(|(_, l)| *l == c) {
            return Err(Error::usage(format!(
                "author training data has no {c} units"
            )));
        }
    }
    let mut log = Vec::with_capacity(config.epochs);
    if config.epochs == 0 {
        return Ok(log);
    }

    let by_class: Vec<Vec<usize>> = AuthorClass::ALL
        .iter()
        .map(|c| (0..labeled.len()).filter(|&i| labeled[i].1 == *c).collect())
        .collect();
    let per_epoch = if config.balance_classes {
        by_class.iter().map(Vec::len).max().unwrap_or(0) * NUM_CLASSES
    } else {
        labeled.len()
    };
    let total_steps = (per_epoch * config.epochs) as f64;
    let mut step = 0usize;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = if config.balance_classes {
            let target = per_epoch / NUM_CLASSES;
            let mut v = Vec::with_capacity(per_epoch);
            for members in &by_class {
                v.extend(members.iter().copied());
                for _ in members.len()..target {
                    v.push(*rng.pick(members));
                }
            }
            v
        } else {
            (0..labeled.len()).collect()
        };
        rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        for &u in &order {
            let (ids, label) = &labeled[u];
            let (loss, g) = model.unit_gradient(ids, *label);
            if !loss.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite author loss at epoch {epoch}, step {step}, lr {}",
                    config.lr
                )));
            }
            loss_sum += loss.as_f64();
            let lr = if config.lr_decay {
                config.lr * (1.0 - step as f64 / total_steps)
            } else {
                config.lr
            };
            apply_sparse_sgd(model, ids, &g, T::lit(lr), config.clip.map(T::lit));
            step += 1;
        }

        let correct = labeled
            .iter()
            .filter(|(ids, l)| {
                let h = model.mean_embedding(ids);
                let p = model.probs(&h);
                SentimentScore::from_probs([p[0].as_f64(), p[1].as_f64(), p[2].as_f64()]).argmax()
                    == *l
            })
            .count();
        let entry = AuthorEpoch {
            epoch,
            mean_loss: loss_sum / order.len().max(1) as f64,
            accuracy: correct as f64 / labeled.len() as f64,
        };
        log::debug!(
            "author epoch={} loss={:.5} acc={:.4}",
            entry.epoch,
            entry.mean_loss,
            entry.accuracy
        );
        log.push(entry);
    }
    Ok(log)
}

fn apply_sparse_sgd<T: Real>(
    model: &mut ShallowModel<T>,
    ids: &[usize],
    g: &SparseGrad<T>,
    lr: T,
    clip: Option<T>,
) {
    // Each occurrence adds d_mean to its row, so a feature seen m times gets m * d_mean.
    let mut mult: Vec<(usize, T)> = Vec::new();
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    for id in sorted {
        match mult.last_mut() {
            Some((last, m)) if *last == id => *m += T::one(),
            _ => mult.push((id, T::one())),
        }
    }
    let d_sq: T = g.d_mean.iter().map(|&d| d * d).sum();
    let emb_sq: T = mult.iter().map(|&(_, m)| m * m * d_sq).sum();
    let norm = (emb_sq + g.class_w.sum_sq() + g.class_b.sum_sq()).sqrt();
    let mut scale = lr;
    if let Some(c) = clip {
        if c > T::zero() && norm > c {
            scale = lr * c / norm;
        }
    }
    let w = &mut model.weights;
    for (id, m) in mult {
        for (e, &d) in w.embedding.row_mut(id).iter_mut().zip(&g.d_mean) {
            *e -= scale * m * d;
        }
    }
    w.class_w
        .add_scaled(&g.class_w, -scale)
        .expect("same shape");
    w.class_b
        .add_scaled(&g.class_b, -scale)
        .expect("same shape");
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuthorVerdict {
    pub author: String,
    pub score: SentimentScore,
    pub class: AuthorClass,
    pub flagged_predator: bool,
}

/// Scores every unit and averages per author (authors in first-seen order).
pub fn score_authors<T: Real>(
    model: &ShallowModel<T>,
    units: &[AuthorUnit],
) -> Result<Vec<AuthorVerdict>> {
    let mut per_author: IndexMap<&str, Vec<SentimentScore>> = IndexMap::new();
    for u in units {
        per_author
            .entry(u.author.as_str())
            .or_default()
            .push(model.score_lines(&u.lines)?);
    }
    per_author
        .into_iter()
        .map(|(author, scores)| {
            let score = average_author_scores(&scores)?;
            Ok(AuthorVerdict {
                author: author.to_string(),
                score,
                class: score.argmax(),
                flagged_predator: false,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Identification {
    pub predators: BTreeSet<String>,
    /// Suspicious conversations that could not be resolved to one author.
    pub anomalies: Vec<String>,
}

/// For each suspicious conversation, takes the participant with the highest
/// averaged P score and flags them iff their own predicted class is P. A tie
/// for the highest P flags nobody in that conversation.
pub fn identify_predators(
    suspicious: &BTreeSet<String>,
    verdicts: &[AuthorVerdict],
    conversations: &[Conversation],
) -> Identification {
    let by_author: HashMap<&str, &AuthorVerdict> =
        verdicts.iter().map(|v| (v.author.as_str(), v)).collect();
    let mut out = Identification::default();
    for conv in conversations.iter().filter(|c| suspicious.contains(&c.id)) {
        let scored: Vec<&AuthorVerdict> = conv
            .participants()
            .into_iter()
            .filter_map(|a| by_author.get(a).copied())
            .collect();
        let Some(top) = scored.iter().map(|v| v.score.p).reduce(f64::max) else {
            log::warn!(
                "suspicious conversation {} has no scored participants",
                conv.id
            );
            out.anomalies.push(conv.id.clone());
            continue;
        };
        let leaders: Vec<&&AuthorVerdict> = scored.iter().filter(|v| v.score.p == top).collect();
        if let [only] = leaders.as_slice() {
            if only.class == AuthorClass::Predator {
                out.predators.insert(only.author.clone());
            }
        }
    }
    out
}

/// Sets `flagged_predator` from an identification result.
pub fn mark_flagged(verdicts: &mut [AuthorVerdict], predators: &BTreeSet<String>) {
    for v in verdicts {
        v.flagged_predator = predators.contains(&v.author);
    }
}

/// Writes `author<TAB>p<TAB>v<TAB>n<TAB>class` lines with six decimals.
pub fn write_scores<W: std::io::Write>(
    verdicts: &[AuthorVerdict],
    mut out: W,
) -> std::io::Result<()> {
    for v in verdicts {
        let s = v.score;
        writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{}",
            v.author, s.p, s.v, s.n, v.class
        )?;
    }
    Ok(())
}

/// Reads a scores file. Scores and classes are taken as written.
pub fn read_scores<R: std::io::BufRead>(input: R) -> Result<Vec<AuthorVerdict>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Format(format!("scores line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |why: &str| Error::Format(format!("scores line {}: {why}: {line:?}", i + 1));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad("expected 5 tab-separated fields"));
        }
        let num = |x: &str| x.parse::<f64>().ok().filter(|v| (0.0..=1.0).contains(v));
        let (Some(p), Some(v), Some(n)) = (num(f[1]), num(f[2]), num(f[3])) else {
            return Err(bad("scores must be numbers in [0, 1]"));
        };
        let score = SentimentScore { p, v, n };
        let class: AuthorClass = f[4].parse()?;
        out.push(AuthorVerdict {
            author: f[0].to_string(),
            score,
            class,
            flagged_predator: false,
        });
    }
    Ok(out)
}
