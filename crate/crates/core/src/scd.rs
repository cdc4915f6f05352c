//! Suspicious-conversation detection: a conversation is a sequence of sentence
//! vectors, split into fixed-length chunks and scored by two LSTM layers with a
//! sigmoid head. A conversation is positive when any chunk scores at or above
//! the threshold.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::Conversation;
use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::lstm::{sequence_backward, sequence_forward, LstmLayerParams, LstmState};
use crate::math::{sigmoid_scalar, Optimizer, OptimizerKind, ParamSet, Real, Rng, Tensor2};
use crate::metrics::ConfusionCounts;
use crate::preprocess::tokenize;

pub const DEFAULT_CHUNK_LEN: usize = 100;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// One sentence vector per message, in message order.
#[derive(Clone, Debug, PartialEq)]
pub struct ConversationSequence<T> {
    pub id: String,
    pub vectors: Tensor2<T>,
    pub label: Option<bool>,
}

/// Sentence vectors for every message of an already-normalized conversation,
/// or `None` when it has no messages.
pub fn vectorize_conversation<T: Real>(
    conv: &Conversation,
    label: Option<bool>,
    lm: &LanguageModel<T>,
    max_sentence_len: usize,
) -> Option<ConversationSequence<T>> {
    if conv.messages.is_empty() {
        return None;
    }
    let mut vectors = Tensor2::zeros(conv.messages.len(), lm.hidden_dim());
    for (i, m) in conv.messages.iter().enumerate() {
        let v = lm.sentence_vector(&tokenize(&m.text), max_sentence_len);
        vectors.row_mut(i).copy_from_slice(&v.values);
    }
    Some(ConversationSequence {
        id: conv.id.clone(),
        vectors,
        label,
    })
}

/// A fixed-length slice of a conversation. Only the valid rows are stored;
/// [`Chunk::matrix`] materializes the zero-padded form.
#[derive(Clone, Debug, PartialEq)]
pub struct Chunk<T> {
    pub conversation: String,
    pub part: usize,
    pub chunk_len: usize,
    pub rows: Tensor2<T>,
    pub label: Option<bool>,
}

impl<T: Real> Chunk<T> {
    pub fn valid_len(&self) -> usize {
        self.rows.rows()
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    /// `chunk_len x dim`, rows at and after `valid_len` all zero.
    pub fn matrix(&self) -> Tensor2<T> {
        let mut m = Tensor2::zeros(self.chunk_len, self.dim());
        let n = self.rows.len();
        m.as_mut_slice()[..n].copy_from_slice(self.rows.as_slice());
        m
    }
}

/// Splits a sequence into `ceil(n / chunk_len)` parts; the last part is
/// implicitly zero-padded. Every part inherits the conversation label.
pub fn chunk_and_pad<T: Real>(
    seq: &ConversationSequence<T>,
    chunk_len: usize,
) -> Result<Vec<Chunk<T>>> {
    if chunk_len == 0 {
        return Err(Error::usage("chunk_len must be at least 1"));
    }
    let (n, dim) = seq.vectors.shape();
    let mut out = Vec::with_capacity(n.div_ceil(chunk_len));
    for (part, start) in (0..n).step_by(chunk_len).enumerate() {
        let end = (start + chunk_len).min(n);
        let rows = Tensor2::from_vec(
            end - start,
            dim,
            seq.vectors.as_slice()[start * dim..end * dim].to_vec(),
        )?;
        out.push(Chunk {
            conversation: seq.id.clone(),
            part,
            chunk_len,
            rows,
            label: seq.label,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScdConfig {
    pub hidden_dim: usize,
    pub chunk_len: usize,
    pub bias: bool,
    /// Read the hidden state at the last valid step instead of the last padded one.
    pub masked: bool,
}

impl Default for ScdConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 200,
            chunk_len: DEFAULT_CHUNK_LEN,
            bias: true,
            masked: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScdWeights<T> {
    pub lower: LstmLayerParams<T>,
    pub upper: LstmLayerParams<T>,
    /// `H x 1`.
    pub head_w: Tensor2<T>,
    /// `1 x 1`.
    pub head_b: Tensor2<T>,
}

impl<T: Real> ParamSet<T> for ScdWeights<T> {
    fn tensors(&self) -> Vec<&Tensor2<T>> {
        let mut v = self.lower.tensors();
        v.extend(self.upper.tensors());
        v.extend([&self.head_w, &self.head_b]);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2<T>> {
        let mut v = self.lower.tensors_mut();
        v.extend(self.upper.tensors_mut());
        v.extend([&mut self.head_w, &mut self.head_b]);
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScdModel<T> {
    pub weights: ScdWeights<T>,
    pub chunk_len: usize,
    pub masked: bool,
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl<T: Real> ScdModel<T> {
    pub fn new(input_dim: usize, config: &ScdConfig, rng: &mut Rng) -> Self {
        let h = config.hidden_dim;
        Self {
            weights: ScdWeights {
                lower: LstmLayerParams::init(input_dim, h, config.bias, rng),
                upper: LstmLayerParams::init(h, h, config.bias, rng),
                head_w: Tensor2::uniform(h, 1, h, rng),
                head_b: Tensor2::zeros(1, 1),
            },
            chunk_len: config.chunk_len,
            masked: config.masked,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.lower.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weights.lower.hidden_dim()
    }

    pub fn config(&self) -> ScdConfig {
        ScdConfig {
            hidden_dim: self.hidden_dim(),
            chunk_len: self.chunk_len,
            bias: self.weights.lower.has_bias(),
            masked: self.masked,
        }
    }

    pub fn cast<U: Real>(&self) -> ScdModel<U> {
        let w = &self.weights;
        ScdModel {
            weights: ScdWeights {
                lower: w.lower.cast(),
                upper: w.upper.cast(),
                head_w: w.head_w.cast(),
                head_b: w.head_b.cast(),
            },
            chunk_len: self.chunk_len,
            masked: self.masked,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        w.lower.validate()?;
        w.upper.validate()?;
        let h = self.hidden_dim();
        if w.upper.input_dim() != h || w.upper.hidden_dim() != h {
            return Err(Error::shape(
                "scd layers",
                format!("{h}->{h}"),
                format!("{}->{}", w.upper.input_dim(), w.upper.hidden_dim()),
            ));
        }
        if w.head_w.shape() != (h, 1) || w.head_b.shape() != (1, 1) {
            return Err(Error::shape(
                "scd head",
                format!("{h}x1"),
                format!("{} / {}", w.head_w.shape_str(), w.head_b.shape_str()),
            ));
        }
        if self.chunk_len == 0 {
            return Err(Error::Format("scd chunk_len is zero".into()));
        }
        Ok(())
    }

    /// The timesteps the network actually consumes for a chunk.
    fn inputs(&self, chunk: &Chunk<T>) -> Result<Tensor2<T>> {
        if chunk.dim() != self.input_dim() {
            return Err(Error::shape(
                "scd input",
                format!("dim {}", self.input_dim()),
                format!("dim {}", chunk.dim()),
            ));
        }
        if chunk.valid_len() == 0 || chunk.valid_len() > self.chunk_len {
            return Err(Error::usage(format!(
                "chunk {}#{} has {} valid rows for chunk length {}",
                chunk.conversation,
                chunk.part,
                chunk.valid_len(),
                self.chunk_len
            )));
        }
        Ok(if self.masked {
            chunk.rows.clone()
        } else {
            let mut m = chunk.matrix();
            if chunk.chunk_len != self.chunk_len {
                m = Tensor2::zeros(self.chunk_len, chunk.dim());
                m.as_mut_slice()[..chunk.rows.len()].copy_from_slice(chunk.rows.as_slice());
            }
            m
        })
    }

    fn logit(&self, s: &[T]) -> T {
        let mut z = self.weights.head_b.as_slice()[0];
        for (&a, &b) in s.iter().zip(self.weights.head_w.as_slice()) {
            z += a * b;
        }
        z
    }

    /// Sigmoid probability that the chunk is positive.
    pub fn chunk_probability(&self, chunk: &Chunk<T>) -> Result<T> {
        let xs = self.inputs(chunk)?;
        let h = self.hidden_dim();
        let lower = sequence_forward(&xs, &LstmState::zeros(h), &self.weights.lower)?;
        let upper = sequence_forward(
            &lower.hidden_states(),
            &LstmState::zeros(h),
            &self.weights.upper,
        )?;
        Ok(sigmoid_scalar(self.logit(&upper.final_state().s)))
    }

    /// Binary cross-entropy of a labelled chunk and its gradient. Also
    /// returns the predicted probability.
    pub fn loss_and_grad(&self, chunk: &Chunk<T>) -> Result<(f64, ScdWeights<T>, T)> {
        let y = chunk.label.ok_or_else(|| {
            Error::usage(format!(
                "chunk {}#{} is unlabelled",
                chunk.conversation, chunk.part
            ))
        })?;
        let xs = self.inputs(chunk)?;
        let w = &self.weights;
        let h = self.hidden_dim();
        let lower = sequence_forward(&xs, &LstmState::zeros(h), &w.lower)?;
        let lower_h = lower.hidden_states();
        let upper = sequence_forward(&lower_h, &LstmState::zeros(h), &w.upper)?;
        let s = &upper.final_state().s;
        let z = self.logit(s);
        let p = sigmoid_scalar(z);
        let zf = z.as_f64();
        let loss = if y { softplus(-zf) } else { softplus(zf) };

        let dz = p - if y { T::one() } else { T::zero() };
        let n = xs.rows();
        let mut d_upper = Tensor2::zeros(n, h);
        let mut head_w = Tensor2::zeros(h, 1);
        for (j, &sj) in s.iter().enumerate() {
            head_w.as_mut_slice()[j] = sj * dz;
            d_upper.set(n - 1, j, w.head_w.as_slice()[j] * dz);
        }
        let head_b = Tensor2::from_vec(1, 1, vec![dz])?;
        let g_upper = sequence_backward(&upper, &w.upper, &d_upper)?;
        let g_lower = sequence_backward(&lower, &w.lower, &g_upper.inputs)?;
        Ok((
            loss,
            ScdWeights {
                lower: g_lower.params,
                upper: g_upper.params,
                head_w,
                head_b,
            },
            p,
        ))
    }
}

/// Per-chunk probabilities and the max-rule verdict for one conversation.
#[derive(Clone, Debug, PartialEq)]
pub struct ScdPrediction<T> {
    pub probs: Vec<T>,
    pub max_prob: T,
    pub positive: bool,
}

pub fn predict_scd<T: Real>(
    model: &ScdModel<T>,
    chunks: &[Chunk<T>],
    threshold: f64,
) -> Result<ScdPrediction<T>> {
    if chunks.is_empty() {
        return Err(Error::usage("no chunks to classify"));
    }
    let probs = chunks
        .iter()
        .map(|c| model.chunk_probability(c))
        .collect::<Result<Vec<_>>>()?;
    Ok(verdict_from_probs(probs, threshold))
}

/// Max-aggregation of chunk probabilities.
pub fn verdict_from_probs<T: Real>(probs: Vec<T>, threshold: f64) -> ScdPrediction<T> {
    let max_prob = probs.iter().copied().fold(T::neg_infinity(), T::max);
    ScdPrediction {
        positive: max_prob.as_f64() >= threshold,
        max_prob,
        probs,
    }
}

/// One conversation-level decision, as written to verdict files.
#[derive(Clone, Debug, PartialEq)]
pub struct ScdVerdict {
    pub conversation: String,
    pub max_prob: f64,
    pub positive: bool,
}

/// Classifies every sequence, in input order.
pub fn classify_sequences<T: Real>(
    model: &ScdModel<T>,
    sequences: &[ConversationSequence<T>],
    threshold: f64,
) -> Result<Vec<ScdVerdict>> {
    sequences
        .iter()
        .map(|seq| {
            let chunks = chunk_and_pad(seq, model.chunk_len)?;
            let pred = predict_scd(model, &chunks, threshold)?;
            Ok(ScdVerdict {
                conversation: seq.id.clone(),
                max_prob: pred.max_prob.as_f64(),
                positive: pred.positive,
            })
        })
        .collect()
}

/// Writes `conv_id<TAB>max_prob<TAB>verdict` lines.
pub fn write_verdicts<W: Write>(verdicts: &[ScdVerdict], mut out: W) -> std::io::Result<()> {
    for v in verdicts {
        let label = if v.positive { "positive" } else { "negative" };
        writeln!(out, "{}\t{:.6}\t{label}", v.conversation, v.max_prob)?;
    }
    Ok(())
}

pub fn read_verdicts<R: BufRead>(input: R) -> Result<Vec<ScdVerdict>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Format(format!("verdict line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = || Error::Format(format!("verdict line {}: {line:?}", i + 1));
        if fields.len() != 3 {
            return Err(bad());
        }
        let max_prob: f64 = fields[1].parse().map_err(|_| bad())?;
        let positive = match fields[2] {
            "positive" => true,
            "negative" => false,
            _ => return Err(bad()),
        };
        out.push(ScdVerdict {
            conversation: fields[0].to_string(),
            max_prob,
            positive,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScdTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Chunks per parameter update.
    pub batch: usize,
    pub optimizer: OptimizerKind,
    pub clip: Option<f64>,
    /// Negatives kept per positive each epoch; `None` keeps all.
    pub negative_ratio: Option<f64>,
    pub threshold: f64,
}

impl Default for ScdTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 0.1,
            batch: 16,
            optimizer: OptimizerKind::Sgd,
            clip: Some(5.0),
            negative_ratio: Some(5.0),
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScdEpoch {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Chunk-level counts from the predictions made while training.
    pub train: ConfusionCounts,
    /// Conversation-level counts on the validation set.
    pub validation: Option<ConfusionCounts>,
}

fn fmt_counts(
    f: &mut std::fmt::Formatter<'_>,
    name: &str,
    c: &ConfusionCounts,
) -> std::fmt::Result {
    let s = crate::metrics::precision_recall_f(c, 1.0).expect("beta is positive");
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    write!(
        f,
        " {name}_acc={} {name}_p={} {name}_r={} {name}_f1={}",
        opt(crate::metrics::accuracy(c).ok()),
        opt(s.precision),
        opt(s.recall),
        opt(s.f_beta)
    )
}

impl std::fmt::Display for ScdEpoch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "epoch={} loss={:.6}", self.epoch, self.mean_loss)?;
        fmt_counts(f, "train", &self.train)?;
        if let Some(v) = &self.validation {
            fmt_counts(f, "val", v)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScdTraining {
    pub log: Vec<ScdEpoch>,
    /// Epoch whose parameters were kept; `None` for zero epochs.
    pub best_epoch: Option<usize>,
}

/// Conversation-level counts using the max rule over each conversation's chunks.
pub fn evaluate_chunks<T: Real>(
    model: &ScdModel<T>,
    chunks: &[Chunk<T>],
    threshold: f64,
) -> Result<ConfusionCounts> {
    let mut by_conv: BTreeMap<&str, (T, bool)> = BTreeMap::new();
    for c in chunks {
        let label = c.label.ok_or_else(|| {
            Error::usage(format!("chunk {}#{} is unlabelled", c.conversation, c.part))
        })?;
        let p = model.chunk_probability(c)?;
        let e = by_conv.entry(&c.conversation).or_insert((p, label));
        e.0 = e.0.max(p);
    }
    Ok(ConfusionCounts::from_pairs(
        by_conv.values().map(|&(p, y)| (p.as_f64() >= threshold, y)),
    ))
}

/// Minimizes chunk-level binary cross-entropy. Negatives are resampled every
/// epoch to the configured ratio. With a validation set the parameters of
/// the epoch with the best validation F1 are kept (earliest on ties).
pub fn train_scd<T: Real>(
    model: &mut ScdModel<T>,
    train: &[Chunk<T>],
    validation: &[Chunk<T>],
    config: &ScdTrainConfig,
    rng: &mut Rng,
) -> Result<ScdTraining> {
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (i, c) in train.iter().enumerate() {
        match c.label {
            Some(true) => positives.push(i),
            Some(false) => negatives.push(i),
            None => {
                return Err(Error::usage(format!(
                    "training chunk {}#{} is unlabelled",
                    c.conversation, c.part
                )))
            }
        }
    }
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::usage(format!(
            "training needs both classes ({} positive, {} negative chunks)",
            positives.len(),
            negatives.len()
        )));
    }
    if config.batch == 0 {
        return Err(Error::usage("batch must be positive"));
    }
    let keep_negatives = match config.negative_ratio {
        Some(r) if r <= 0.0 || !r.is_finite() => {
            return Err(Error::usage(format!(
                "negative_ratio must be positive, got {r}"
            )))
        }
        Some(r) => ((positives.len() as f64 * r).round() as usize).clamp(1, negatives.len()),
        None => negatives.len(),
    };

    let mut opt = Optimizer::<T>::new(config.optimizer, config.lr, config.clip);
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ScdWeights<T>)> = None;
    let mut step = 0usize;

    for epoch in 1..=config.epochs {
        rng.shuffle(&mut negatives);
        let mut order: Vec<usize> = positives
            .iter()
            .chain(&negatives[..keep_negatives])
            .copied()
            .collect();
        rng.shuffle(&mut order);

        let mut counts = ConfusionCounts::default();
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch) {
            let mut acc = model.weights.zeroed();
            for &i in batch {
                let chunk = &train[i];
                let (loss, grads, p) = model.loss_and_grad(chunk)?;
                if !loss.is_finite() || !grads.all_finite() {
                    return Err(Error::numeric(format!(
                        "non-finite classifier loss (lr {}, step {step}, chunk {}#{})",
                        config.lr, chunk.conversation, chunk.part
                    )));
                }
                loss_sum += loss;
                counts.record(p.as_f64() >= config.threshold, chunk.label == Some(true));
                acc.accumulate(&grads)?;
            }
            acc.scale_all(T::one() / T::lit(batch.len() as f64));
            opt.step(&mut model.weights, &acc)?;
            step += 1;
        }

        let val = if validation.is_empty() {
            None
        } else {
            Some(evaluate_chunks(model, validation, config.threshold)?)
        };
        let entry = ScdEpoch {
            epoch,
            mean_loss: loss_sum / order.len() as f64,
            train: counts,
            validation: val,
        };
        log::info!("{entry}");
        let score = match &val {
            Some(c) => crate::metrics::precision_recall_f(c, 1.0)?
                .f_beta
                .unwrap_or(-1.0),
            None => f64::NEG_INFINITY,
        };
        let better = match &best {
            None => true,
            Some((s, _, _)) => val.is_none() || score > *s,
        };
        if better {
            best = Some((score, epoch, model.weights.clone()));
        }
        log.push(entry);
    }

    let best_epoch = best.map(|(_, e, w)| {
        model.weights = w;
        e
    });
    Ok(ScdTraining { log, best_epoch })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(n: usize, dim: usize) -> ConversationSequence<f64> {
        let data = (0..n * dim).map(|i| i as f64 + 1.0).collect();
        ConversationSequence {
            id: "c".into(),
            vectors: Tensor2::from_vec(n, dim, data).unwrap(),
            label: Some(true),
        }
    }

    #[test]
    fn chunk_counts_and_padding() {
        for (n, parts) in [
            (1, 1),
            (5, 1),
            (99, 1),
            (100, 1),
            (101, 2),
            (250, 3),
            (501, 6),
        ] {
            let s = seq(n, 3);
            let chunks = chunk_and_pad(&s, 100).unwrap();
            assert_eq!(chunks.len(), parts, "n={n}");
            let mut rebuilt = Vec::new();
            for (i, c) in chunks.iter().enumerate() {
                assert_eq!(c.part, i);
                assert_eq!(c.label, Some(true));
                assert_eq!(c.valid_len(), (n - 100 * i).min(100));
                let m = c.matrix();
                assert_eq!(m.shape(), (100, 3));
                for r in c.valid_len()..100 {
                    assert!(m.row(r).iter().all(|&x| x == 0.0));
                }
                rebuilt.extend_from_slice(&m.as_slice()[..c.valid_len() * 3]);
            }
            assert_eq!(rebuilt, s.vectors.as_slice());
        }
        assert!(chunk_and_pad(&seq(3, 2), 0).is_err());
    }

    #[test]
    fn zero_head_gives_half() {
        let mut m = ScdModel::<f64>::new(
            3,
            &ScdConfig {
                hidden_dim: 4,
                chunk_len: 6,
                ..Default::default()
            },
            &mut Rng::new(1),
        );
        m.weights.head_w.fill(0.0);
        let chunks = chunk_and_pad(&seq(8, 3), 6).unwrap();
        let p = predict_scd(&m, &chunks, 0.5).unwrap();
        assert_eq!(p.probs, vec![0.5, 0.5]);
        assert!(p.positive);
    }

    #[test]
    fn max_rule_and_threshold() {
        let p = verdict_from_probs(vec![0.9f64, 0.2], 0.5);
        assert!(p.positive);
        assert_eq!(p.max_prob, 0.9);
        assert!(!verdict_from_probs(vec![0.9f64, 0.2], 0.95).positive);
    }

    #[test]
    fn masked_padding_is_inert() {
        let m = ScdModel::<f64>::new(
            3,
            &ScdConfig {
                hidden_dim: 4,
                chunk_len: 6,
                ..Default::default()
            },
            &mut Rng::new(2),
        );
        let s = seq(4, 3);
        let padded = chunk_and_pad(&s, 6).unwrap();
        let exact = chunk_and_pad(&s, 4).unwrap();
        let a = m.chunk_probability(&padded[0]).unwrap();
        let b = ScdModel {
            chunk_len: 4,
            ..m.clone()
        }
        .chunk_probability(&exact[0])
        .unwrap();
        assert_eq!(a, b);

        let unmasked = ScdModel { masked: false, ..m };
        assert_ne!(unmasked.chunk_probability(&padded[0]).unwrap(), a);
    }

    #[test]
    fn verdict_file_roundtrip() {
        let v = vec![
            ScdVerdict {
                conversation: "a1".into(),
                max_prob: 0.912345,
                positive: true,
            },
            ScdVerdict {
                conversation: "b2".into(),
                max_prob: 0.1,
                positive: false,
            },
        ];
        let mut buf = Vec::new();
        write_verdicts(&v, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "a1\t0.912345\tpositive\nb2\t0.100000\tnegative\n"
        );
        assert_eq!(read_verdicts(&buf[..]).unwrap(), v);
        assert!(read_verdicts(&b"x\t0.1\tmaybe\n"[..]).is_err());
    }

    #[test]
    fn training_rules() {
        let cfg = ScdConfig {
            hidden_dim: 4,
            chunk_len: 6,
            ..Default::default()
        };
        let mut m = ScdModel::<f64>::new(3, &cfg, &mut Rng::new(3));
        let before = m.clone();
        let pos = chunk_and_pad(&seq(3, 3), 6).unwrap();
        let mut neg_seq = seq(3, 3);
        neg_seq.label = Some(false);
        let neg = chunk_and_pad(&neg_seq, 6).unwrap();
        let zero = ScdTrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let t = train_scd(
            &mut m,
            &[pos[0].clone(), neg[0].clone()],
            &[],
            &zero,
            &mut Rng::new(0),
        )
        .unwrap();
        assert!(t.log.is_empty() && t.best_epoch.is_none());
        assert_eq!(m, before);
        assert!(matches!(
            train_scd(
                &mut m,
                &pos,
                &[],
                &ScdTrainConfig::default(),
                &mut Rng::new(0)
            ),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn separable_chunks_are_learned() {
        let dim = 4;
        let mut rng = Rng::new(11);
        let mut chunks = Vec::new();
        for i in 0..40 {
            let positive = i % 4 == 0;
            let n = 2 + rng.below(5);
            let mut v = Tensor2::zeros(n, dim);
            for r in 0..n {
                for c in 0..dim {
                    v.set(r, c, rng.uniform(-0.5, 0.5));
                }
            }
            if positive {
                let r = rng.below(n);
                v.row_mut(r).copy_from_slice(&[1.0, -1.0, 1.0, -1.0]);
            }
            let s = ConversationSequence {
                id: format!("c{i}"),
                vectors: v,
                label: Some(positive),
            };
            chunks.extend(chunk_and_pad(&s, 10).unwrap());
        }
        let mut m = ScdModel::<f64>::new(
            dim,
            &ScdConfig {
                hidden_dim: 8,
                chunk_len: 10,
                ..Default::default()
            },
            &mut Rng::new(4),
        );
        let cfg = ScdTrainConfig {
            epochs: 30,
            lr: 0.02,
            batch: 4,
            optimizer: OptimizerKind::Adam,
            negative_ratio: None,
            ..Default::default()
        };
        let t = train_scd(&mut m, &chunks, &chunks, &cfg, &mut Rng::new(5)).unwrap();
        let best = t.best_epoch.unwrap();
        let c = t.log[best - 1].validation.unwrap();
        let f1 = crate::metrics::precision_recall_f(&c, 1.0)
            .unwrap()
            .f_beta
            .unwrap();
        assert!(f1 >= 0.99, "f1 {f1} at epoch {best}");
        assert_eq!(evaluate_chunks(&m, &chunks, 0.5).unwrap(), c);
    }
}
