//! Two-layer LSTM language model (embedding -> LSTM -> LSTM -> softmax),
//! trained by truncated backpropagation through time. The upper layer's last
//! hidden state over a sentence is that sentence's vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{cell_step, sequence_backward, sequence_forward, LstmLayerParams, LstmState};
use crate::math::{
    outer_acc, softmax_in_place, vec_mat_acc, vec_mat_t_acc, Optimizer, OptimizerKind, ParamSet,
    Real, Rng, Tensor2, LOG_EPSILON,
};
use crate::preprocess::{encode, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub bias: bool,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            embed_dim: 200,
            hidden_dim: 200,
            bias: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmWeights<T> {
    pub embedding: Tensor2<T>,
    pub lower: LstmLayerParams<T>,
    pub upper: LstmLayerParams<T>,
    pub output_w: Tensor2<T>,
    pub output_b: Tensor2<T>,
}

impl<T: Real> ParamSet<T> for LmWeights<T> {
    fn tensors(&self) -> Vec<&Tensor2<T>> {
        let mut v = vec![&self.embedding];
        v.extend(self.lower.tensors());
        v.extend(self.upper.tensors());
        v.extend([&self.output_w, &self.output_b]);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2<T>> {
        let mut v = vec![&mut self.embedding];
        v.extend(self.lower.tensors_mut());
        v.extend(self.upper.tensors_mut());
        v.extend([&mut self.output_w, &mut self.output_b]);
        v
    }
}

/// Recurrent state of both layers.
#[derive(Clone, Debug, PartialEq)]
pub struct StackState<T> {
    pub lower: LstmState<T>,
    pub upper: LstmState<T>,
}

impl<T: Real> StackState<T> {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            lower: LstmState::zeros(hidden_dim),
            upper: LstmState::zeros(hidden_dim),
        }
    }
}

/// Per-step next-token distributions plus the final state of both layers.
#[derive(Clone, Debug)]
pub struct LmOutput<T> {
    pub probs: Tensor2<T>,
    pub state: StackState<T>,
}

/// Upper-layer hidden state after the last consumed token of a sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceVector<T> {
    pub values: Vec<T>,
    pub source_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LanguageModel<T> {
    pub vocab: Vocabulary,
    pub weights: LmWeights<T>,
}

impl<T: Real> LanguageModel<T> {
    pub fn new(vocab: Vocabulary, config: &LmConfig, rng: &mut Rng) -> Self {
        let (v, d, h) = (vocab.len(), config.embed_dim, config.hidden_dim);
        let embedding = Tensor2::uniform(v, d, d, rng);
        let lower = LstmLayerParams::init(d, h, config.bias, rng);
        let upper = LstmLayerParams::init(h, h, config.bias, rng);
        let output_w = Tensor2::uniform(h, v, h, rng);
        Self {
            vocab,
            weights: LmWeights {
                embedding,
                lower,
                upper,
                output_w,
                output_b: Tensor2::zeros(1, v),
            },
        }
    }

    /// A model whose output projection is zero, so every prediction is uniform.
    pub fn uniform(vocab: Vocabulary, config: &LmConfig, rng: &mut Rng) -> Self {
        let mut m = Self::new(vocab, config, rng);
        m.weights.output_w.fill(T::zero());
        m
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.weights.embedding.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weights.lower.hidden_dim()
    }

    pub fn has_bias(&self) -> bool {
        self.weights.lower.has_bias()
    }

    pub fn config(&self) -> LmConfig {
        LmConfig {
            embed_dim: self.embed_dim(),
            hidden_dim: self.hidden_dim(),
            bias: self.has_bias(),
        }
    }

    pub fn cast<U: Real>(&self) -> LanguageModel<U> {
        let w = &self.weights;
        LanguageModel {
            vocab: self.vocab.clone(),
            weights: LmWeights {
                embedding: w.embedding.cast(),
                lower: w.lower.cast(),
                upper: w.upper.cast(),
                output_w: w.output_w.cast(),
                output_b: w.output_b.cast(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let (v, d, h) = (self.vocab.len(), self.embed_dim(), self.hidden_dim());
        w.lower.validate()?;
        w.upper.validate()?;
        if w.embedding.rows() != v {
            return Err(Error::shape(
                "lm embedding",
                format!("{v} rows"),
                w.embedding.shape_str(),
            ));
        }
        if w.lower.input_dim() != d || w.upper.input_dim() != h || w.upper.hidden_dim() != h {
            return Err(Error::shape(
                "lm layers",
                format!("{d}->{h}->{h}"),
                format!(
                    "{}->{}->{}",
                    w.lower.input_dim(),
                    w.upper.input_dim(),
                    w.upper.hidden_dim()
                ),
            ));
        }
        if w.output_w.shape() != (h, v) || w.output_b.shape() != (1, v) {
            return Err(Error::shape(
                "lm output",
                format!("{h}x{v}"),
                format!("{} / {}", w.output_w.shape_str(), w.output_b.shape_str()),
            ));
        }
        Ok(())
    }

    fn check_indices(&self, indices: &[usize]) -> Result<()> {
        if indices.is_empty() {
            return Err(Error::usage("language model input is empty"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.vocab_size()) {
            return Err(Error::usage(format!(
                "token index {bad} out of range for vocabulary of {}",
                self.vocab_size()
            )));
        }
        Ok(())
    }

    fn logits_into(&self, s: &[T], out: &mut [T]) {
        out.copy_from_slice(self.weights.output_b.as_slice());
        vec_mat_acc(s, &self.weights.output_w, out);
    }

    fn advance(&self, index: usize, state: &StackState<T>) -> StackState<T> {
        let w = &self.weights;
        let lower =
            cell_step(w.embedding.row(index), &state.lower, &w.lower).expect("validated dims");
        let upper = cell_step(&lower.s, &state.upper, &w.upper).expect("validated dims");
        StackState { lower, upper }
    }

    /// Next-token distribution after each input token, starting from `init`.
    pub fn forward_from(&self, indices: &[usize], init: &StackState<T>) -> Result<LmOutput<T>> {
        self.check_indices(indices)?;
        let v = self.vocab_size();
        let mut probs = Tensor2::zeros(indices.len(), v);
        let mut state = init.clone();
        for (t, &idx) in indices.iter().enumerate() {
            state = self.advance(idx, &state);
            let row = probs.row_mut(t);
            self.logits_into(&state.upper.s, row);
            softmax_in_place(row);
        }
        Ok(LmOutput { probs, state })
    }

    /// Forward pass from the zero state.
    pub fn lm_forward(&self, indices: &[usize]) -> Result<LmOutput<T>> {
        self.forward_from(indices, &StackState::zeros(self.hidden_dim()))
    }

    /// Final recurrent state after `indices`, without the output layer.
    pub fn final_state(&self, indices: &[usize]) -> Result<StackState<T>> {
        self.check_indices(indices)?;
        let mut state = StackState::zeros(self.hidden_dim());
        for &idx in indices {
            state = self.advance(idx, &state);
        }
        Ok(state)
    }

    /// Encodes `tokens` (EOS appended, truncated to `max_len`) and returns the
    /// upper layer's hidden state after the last index.
    pub fn sentence_vector<S: AsRef<str>>(
        &self,
        tokens: &[S],
        max_len: usize,
    ) -> SentenceVector<T> {
        let indices = encode(tokens, &self.vocab, max_len);
        let state = self
            .final_state(&indices)
            .expect("encode yields in-range, non-empty indices");
        SentenceVector {
            values: state.upper.s,
            source_len: indices.len(),
        }
    }

    /// Summed cross-entropy of predicting `targets[t]` after `inputs[..=t]`,
    /// its gradient with respect to every weight, and the final state.
    /// Gradients do not flow into `init`.
    pub fn window_loss_and_grad(
        &self,
        inputs: &[usize],
        targets: &[usize],
        init: &StackState<T>,
    ) -> Result<(f64, LmWeights<T>, StackState<T>)> {
        self.check_indices(inputs)?;
        if targets.len() != inputs.len() {
            return Err(Error::usage(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        self.check_indices(targets)?;
        let w = &self.weights;
        let (v, d, h) = (self.vocab_size(), self.embed_dim(), self.hidden_dim());
        let n = inputs.len();

        let mut xs = Tensor2::zeros(n, d);
        for (t, &idx) in inputs.iter().enumerate() {
            xs.row_mut(t).copy_from_slice(w.embedding.row(idx));
        }
        let lower = sequence_forward(&xs, &init.lower, &w.lower)?;
        let lower_h = lower.hidden_states();
        let upper = sequence_forward(&lower_h, &init.upper, &w.upper)?;

        let mut grads = LmWeights {
            embedding: Tensor2::zeros(v, d),
            lower: LstmLayerParams::zeros(d, h, w.lower.has_bias()),
            upper: LstmLayerParams::zeros(h, h, w.upper.has_bias()),
            output_w: Tensor2::zeros(h, v),
            output_b: Tensor2::zeros(1, v),
        };
        let mut d_upper = Tensor2::zeros(n, h);
        let mut p = vec![T::zero(); v];
        let mut loss = 0.0f64;
        for t in 0..n {
            let s = upper.hidden(t);
            self.logits_into(s, &mut p);
            softmax_in_place(&mut p);
            loss -= p[targets[t]].as_f64().max(LOG_EPSILON).ln();
            p[targets[t]] -= T::one();
            outer_acc(&mut grads.output_w, s, &p);
            for (b, &dz) in grads.output_b.as_mut_slice().iter_mut().zip(&p) {
                *b += dz;
            }
            vec_mat_t_acc(&p, &w.output_w, d_upper.row_mut(t));
        }

        let g_upper = sequence_backward(&upper, &w.upper, &d_upper)?;
        let g_lower = sequence_backward(&lower, &w.lower, &g_upper.inputs)?;
        for (t, &idx) in inputs.iter().enumerate() {
            let row = grads.embedding.row_mut(idx);
            for (e, &dx) in row.iter_mut().zip(g_lower.inputs.row(t)) {
                *e += dx;
            }
        }
        grads.upper = g_upper.params;
        grads.lower = g_lower.params;

        let state = StackState {
            lower: lower.final_state().clone(),
            upper: upper.final_state().clone(),
        };
        Ok((loss, grads, state))
    }

    /// Summed cross-entropy and prediction count over a document, without
    /// gradients.
    fn document_loss(&self, doc: &[usize]) -> Result<(f64, usize)> {
        if doc.len() < 2 {
            return Ok((0.0, 0));
        }
        self.check_indices(doc)?;
        let out = self.lm_forward(&doc[..doc.len() - 1])?;
        let mut loss = 0.0;
        for (t, &target) in doc[1..].iter().enumerate() {
            loss -= out.probs.get(t, target).as_f64().max(LOG_EPSILON).ln();
        }
        Ok((loss, doc.len() - 1))
    }
}

/// `exp` of the mean next-token cross-entropy over every prediction in the
/// corpus (each document starts from the zero state).
pub fn perplexity<T: Real>(model: &LanguageModel<T>, corpus: &[Vec<usize>]) -> Result<f64> {
    let mut loss = 0.0;
    let mut count = 0usize;
    for doc in corpus {
        let (l, c) = model.document_loss(doc)?;
        loss += l;
        count += c;
    }
    if count == 0 {
        return Err(Error::usage(
            "perplexity needs at least one next-token prediction",
        ));
    }
    Ok((loss / count as f64).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmTrainConfig {
    /// Unrolled timesteps per truncated-BPTT window.
    pub window: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Multiplicative learning-rate factor applied after each epoch.
    pub lr_decay: f64,
    /// Windows per parameter update.
    pub batch: usize,
    pub optimizer: OptimizerKind,
    pub clip: Option<f64>,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        Self {
            window: 35,
            epochs: 10,
            lr: 1.0,
            lr_decay: 1.0,
            batch: 20,
            optimizer: OptimizerKind::Sgd,
            clip: Some(5.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmEpoch {
    pub epoch: usize,
    pub train_ppl: f64,
    pub val_ppl: Option<f64>,
}

impl std::fmt::Display for LmEpoch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "epoch={} train_ppl={:.4}", self.epoch, self.train_ppl)?;
        match self.val_ppl {
            Some(v) => write!(f, " val_ppl={v:.4}"),
            None => write!(f, " val_ppl=-"),
        }
    }
}

/// Truncated BPTT over fixed windows. State carries from one window to the
/// next inside a document and resets between documents; document order is
/// reshuffled every epoch. With a validation corpus the parameters of the
/// epoch with the lowest validation perplexity are kept.
pub fn train_lm<T: Real>(
    model: &mut LanguageModel<T>,
    corpus: &[Vec<usize>],
    validation: &[Vec<usize>],
    config: &LmTrainConfig,
    rng: &mut Rng,
) -> Result<Vec<LmEpoch>> {
    if corpus.iter().all(|d| d.len() < 2) {
        return Err(Error::usage(
            "language-model corpus has no next-token predictions",
        ));
    }
    if config.window == 0 || config.batch == 0 {
        return Err(Error::usage("window and batch must be positive"));
    }
    let h = model.hidden_dim();
    let mut opt = Optimizer::<T>::new(config.optimizer, config.lr, config.clip);
    let mut lr = config.lr;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    let mut best: Option<(f64, LmWeights<T>)> = None;

    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut acc = model.weights.zeroed();
        let mut in_batch = 0usize;
        let mut batch_tokens = 0usize;
        let mut loss_sum = 0.0;
        let mut token_count = 0usize;

        for &d in &order {
            let doc = &corpus[d];
            if doc.len() < 2 {
                continue;
            }
            let mut state = StackState::zeros(h);
            let preds = doc.len() - 1;
            let mut start = 0;
            while start < preds {
                let end = (start + config.window).min(preds);
                let (loss, grads, next) = model.window_loss_and_grad(
                    &doc[start..end],
                    &doc[start + 1..end + 1],
                    &state,
                )?;
                if !loss.is_finite() || !grads.all_finite() {
                    return Err(Error::numeric(format!(
                        "non-finite language-model loss (lr {lr}, step {step}, window {start}..{end} of document {d})"
                    )));
                }
                state = next;
                loss_sum += loss;
                token_count += end - start;
                batch_tokens += end - start;
                acc.accumulate(&grads)?;
                in_batch += 1;
                start = end;
                if in_batch == config.batch {
                    acc.scale_all(T::one() / T::lit(batch_tokens as f64));
                    opt.step(&mut model.weights, &acc)?;
                    acc.zero();
                    in_batch = 0;
                    batch_tokens = 0;
                    step += 1;
                }
            }
        }
        if in_batch > 0 {
            acc.scale_all(T::one() / T::lit(batch_tokens as f64));
            opt.step(&mut model.weights, &acc)?;
            step += 1;
        }

        let val_ppl = if validation.iter().any(|d| d.len() >= 2) {
            Some(perplexity(model, validation)?)
        } else {
            None
        };
        let entry = LmEpoch {
            epoch,
            train_ppl: (loss_sum / token_count.max(1) as f64).exp(),
            val_ppl,
        };
        log::info!("{entry}");
        if let Some(v) = val_ppl {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.weights.clone()));
            }
        }
        log.push(entry);
        lr *= config.lr_decay;
        opt.set_lr(lr);
    }
    if let Some((_, w)) = best {
        model.weights = w;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(v: usize, d: usize, h: usize) -> LanguageModel<f64> {
        let vocab = Vocabulary::from_tokens((0..v.saturating_sub(6)).map(|i| format!("w{i}")));
        LanguageModel::new(
            vocab,
            &LmConfig {
                embed_dim: d,
                hidden_dim: h,
                bias: true,
            },
            &mut Rng::new(3),
        )
    }

    #[test]
    fn uniform_output_and_single_token() {
        let vocab = Vocabulary::from_tokens((0..94).map(|i| format!("w{i}")));
        let m = LanguageModel::<f64>::uniform(
            vocab,
            &LmConfig {
                embed_dim: 4,
                hidden_dim: 3,
                bias: true,
            },
            &mut Rng::new(1),
        );
        let out = m.lm_forward(&[7]).unwrap();
        assert_eq!(out.probs.rows(), 1);
        assert!(out
            .probs
            .as_slice()
            .iter()
            .all(|&p| (p - 0.01).abs() < 1e-15));
        let ppl = perplexity(&m, &[vec![6, 7, 8, 9]]).unwrap();
        assert!((ppl - 100.0).abs() < 1e-6, "{ppl}");
    }

    #[test]
    fn rejects_bad_indices() {
        let m = tiny(10, 3, 2);
        assert!(matches!(m.lm_forward(&[]), Err(Error::Usage(_))));
        assert!(matches!(m.lm_forward(&[10]), Err(Error::Usage(_))));
    }

    #[test]
    fn distributions_sum_to_one() {
        let m = tiny(12, 4, 5);
        let out = m.lm_forward(&[6, 7, 8, 2]).unwrap();
        for t in 0..4 {
            let s: f64 = out.probs.row(t).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sentence_vector_is_deterministic_and_advances() {
        let m = tiny(12, 4, 5);
        let a = m.sentence_vector(&["w0", "w1", "w2"], 35);
        assert_eq!(a, m.sentence_vector(&["w0", "w1", "w2"], 35));
        assert_eq!(a.source_len, 4);
        assert_ne!(a, m.sentence_vector(&["w0", "w1"], 35));
        let unseen = m.sentence_vector(&["w2", "w0", "nope"], 35);
        assert_eq!(unseen.values.len(), 5);
        assert!(unseen.values.iter().all(|v| v.is_finite()));
        let empty = m.sentence_vector::<&str>(&[], 35);
        assert_eq!(empty.source_len, 1);
    }

    #[test]
    fn cyclic_corpus_is_learned() {
        let vocab = Vocabulary::from_tokens(["a", "b", "c", "d", "e"]);
        let doc: Vec<usize> = (0..60).map(|i| 6 + i % 5).collect();
        let mut m = LanguageModel::<f32>::new(
            vocab,
            &LmConfig {
                embed_dim: 8,
                hidden_dim: 8,
                bias: true,
            },
            &mut Rng::new(5),
        );
        let cfg = LmTrainConfig {
            window: 10,
            epochs: 200,
            lr: 0.05,
            batch: 1,
            optimizer: OptimizerKind::Adam,
            ..Default::default()
        };
        let log = train_lm(
            &mut m,
            std::slice::from_ref(&doc),
            &[],
            &cfg,
            &mut Rng::new(6),
        )
        .unwrap();
        let last = log.last().unwrap().train_ppl;
        assert!(last < 1.05, "{last}");
        assert!(perplexity(&m, &[doc]).unwrap() < 1.05);
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let mut m = tiny(12, 4, 5);
        let before = m.clone();
        let cfg = LmTrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let log = train_lm(&mut m, &[vec![6, 7, 8]], &[], &cfg, &mut Rng::new(0)).unwrap();
        assert!(log.is_empty());
        assert_eq!(m, before);
    }
}
