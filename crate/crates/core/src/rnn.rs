//! Word-level recurrent language model with a class-factored softmax.
//!
//! ```text
//! h(t)       = σ(U_w[x(t)] + U_h h(t−1)),   h(−1) = 0.1
//! p(w | h)   = softmax(C h)[class(w)] · softmax_{v ∈ class(w)}(V h)[w]
//! ```
//!
//! The input at step 0 is `<s>`; targets are the sentence words followed by
//! `</s>`. The hidden state is reset for every sentence. Words are binned
//! into classes by descending training frequency so that each class holds
//! roughly the same unigram mass.
//!
//! Training minimizes per-sentence cross entropy with truncated
//! backpropagation through time: the error of the prediction made at step `t`
//! flows back through at most `bptt` applications of the recurrence.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{Container, ModelKind, PayloadReader, PayloadWriter};
use crate::corpus::{Corpus, EosConvention, Sentence, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::metrics::{LanguageModel, Unit};
use crate::neural::{axpy, clip_in_place, dot, sgd_update, sigmoid, softmax_in_place, DenseMatrix, ScaledRows, SgdConfig};
use crate::seeding::substream;

pub const INITIAL_HIDDEN: f64 = 0.1;
const INIT_SCALE: f64 = 0.1;
const NO_CLASS: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnnConfig {
    pub hidden: usize,
    pub classes: usize,
    /// Truncation depth of backpropagation through time.
    pub bptt: usize,
    pub sgd: SgdConfig,
    /// Relative validation improvement below which the learning rate starts halving.
    pub halve_below: f64,
    /// Relative validation improvement below which training stops once halving.
    pub stop_below: f64,
}

impl Default for RnnConfig {
    fn default() -> Self {
        RnnConfig {
            hidden: 200,
            classes: 50,
            bptt: 5,
            sgd: SgdConfig {
                learning_rate: 0.1,
                l2: 1e-6,
                max_epochs: 20,
                seed: 1,
                lr_decay: true,
                clip: Some(15.0),
            },
            halve_below: 0.003,
            stop_below: 0.001,
        }
    }
}

impl RnnConfig {
    pub fn validate(&self) -> Result<()> {
        self.sgd.validate()?;
        if self.hidden == 0 || self.classes == 0 || self.bptt == 0 {
            return Err(Error::InvalidArgument("hidden size, classes and bptt depth must be positive".into()));
        }
        Ok(())
    }
}

/// Word-to-class assignment by frequency binning.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassMap {
    class_of: Vec<u32>,
    members: Vec<Vec<TokenId>>,
    /// Position of each word inside its class.
    slot: Vec<u32>,
}

impl ClassMap {
    /// Bins predictable ids (everything but `<s>`) into at most `n_classes`
    /// classes of roughly equal unigram mass. Ties go to the lower id.
    pub fn by_frequency(train: &Corpus, vocab: &Vocabulary, n_classes: usize) -> Self {
        let mut counts = vec![0u64; vocab.size()];
        for s in train.sentences() {
            for t in s.tokens() {
                counts[t.index()] += 1;
            }
        }
        counts[vocab.eos_id().index()] += train.len() as u64;
        let mut order: Vec<TokenId> = (0..vocab.size() as u32)
            .map(TokenId)
            .filter(|&id| id != vocab.bos_id())
            .collect();
        order.sort_by(|a, b| counts[b.index()].cmp(&counts[a.index()]).then(a.cmp(b)));
        let total: u64 = counts.iter().sum();

        let mut assignment = vec![NO_CLASS; vocab.size()];
        let mut class = 0u32;
        let mut cumulative = 0.0;
        for id in order {
            assignment[id.index()] = class;
            cumulative += counts[id.index()] as f64 / total as f64;
            if cumulative > (class + 1) as f64 / n_classes as f64 && (class as usize) < n_classes - 1 {
                class += 1;
            }
        }
        Self::from_assignment(assignment)
    }

    /// Every predictable id in one class.
    pub fn single(vocab: &Vocabulary) -> Self {
        let assignment = (0..vocab.size())
            .map(|i| if i == vocab.bos_id().index() { NO_CLASS } else { 0 })
            .collect();
        Self::from_assignment(assignment)
    }

    fn from_assignment(mut class_of: Vec<u32>) -> Self {
        // compact away empty classes, keeping order
        let mut used: Vec<u32> = class_of.iter().copied().filter(|&c| c != NO_CLASS).collect();
        used.sort_unstable();
        used.dedup();
        let remap: BTreeMap<u32, u32> = used.iter().enumerate().map(|(i, &c)| (c, i as u32)).collect();
        let mut members = vec![Vec::new(); used.len()];
        let mut slot = vec![0u32; class_of.len()];
        for (id, c) in class_of.iter_mut().enumerate() {
            if *c != NO_CLASS {
                *c = remap[c];
                slot[id] = members[*c as usize].len() as u32;
                members[*c as usize].push(TokenId(id as u32));
            }
        }
        ClassMap { class_of, members, slot }
    }

    pub fn num_classes(&self) -> usize {
        self.members.len()
    }

    pub fn class_of(&self, id: TokenId) -> Option<usize> {
        match self.class_of.get(id.index()) {
            Some(&c) if c != NO_CLASS => Some(c as usize),
            _ => None,
        }
    }

    pub fn members(&self, class: usize) -> &[TokenId] {
        &self.members[class]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnnEpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_entropy: f64,
    pub valid_entropy: f64,
    pub accepted: bool,
    pub clipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RnnMeta {
    hidden: usize,
    classes: usize,
    bptt: usize,
    label: String,
    /// "200 hidden layers" is read as 200 units in one recurrent layer.
    hidden_reading: String,
    epochs: Vec<RnnEpochStats>,
}

/// Per-sentence forward pass: probability of each true next word.
#[derive(Clone, Debug)]
pub struct RnnForward {
    pub probs: Vec<f64>,
    pub final_hidden: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RnnModel {
    vocab: Vocabulary,
    hidden: usize,
    /// Word block of the input matrix, one row per input id.
    input: ScaledRows,
    recurrent: DenseMatrix,
    class_out: DenseMatrix,
    /// Output word scores, one row per id.
    word_out: ScaledRows,
    classes: ClassMap,
    bptt: usize,
    epochs: Vec<RnnEpochStats>,
}

/// Sparse/dense gradient of one sentence's loss.
#[derive(Clone, Debug)]
pub struct RnnGradient {
    pub input: BTreeMap<usize, Vec<f64>>,
    pub recurrent: DenseMatrix,
    pub class_out: DenseMatrix,
    pub word_out: BTreeMap<usize, Vec<f64>>,
}

struct StepOutput {
    class_probs: Vec<f64>,
    word_probs: Vec<f64>,
    class: usize,
    prob: f64,
}

impl RnnModel {
    /// Fresh model with weights uniform in `[-0.1, 0.1]`.
    pub fn new(vocab: &Vocabulary, classes: ClassMap, hidden: usize, bptt: usize, seed: u64) -> Self {
        let mut rng = substream(seed, 0);
        let v = vocab.size();
        let input = DenseMatrix::uniform(v, hidden, INIT_SCALE, &mut rng);
        let recurrent = DenseMatrix::uniform(hidden, hidden, INIT_SCALE, &mut rng);
        let class_out = DenseMatrix::uniform(classes.num_classes(), hidden, INIT_SCALE, &mut rng);
        let word_out = DenseMatrix::uniform(v, hidden, INIT_SCALE, &mut rng);
        RnnModel {
            vocab: vocab.clone(),
            hidden,
            input: ScaledRows::new(input),
            recurrent,
            class_out,
            word_out: ScaledRows::new(word_out),
            classes,
            bptt,
            epochs: Vec::new(),
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn classes(&self) -> &ClassMap {
        &self.classes
    }

    pub fn bptt(&self) -> usize {
        self.bptt
    }

    pub fn set_bptt(&mut self, depth: usize) {
        self.bptt = depth.max(1);
    }

    pub fn epochs(&self) -> &[RnnEpochStats] {
        &self.epochs
    }

    pub fn initial_hidden(&self) -> Vec<f64> {
        vec![INITIAL_HIDDEN; self.hidden]
    }

    /// Next hidden state after reading `input`.
    pub fn step(&self, prev: &[f64], input: TokenId) -> Vec<f64> {
        let mut h = vec![0.0; self.hidden];
        self.recurrent.matvec_acc(prev, &mut h);
        axpy(self.input.scale(), self.input.stored_row(input.index()), &mut h);
        for x in &mut h {
            *x = sigmoid(*x);
        }
        h
    }

    fn output(&self, h: &[f64], target: TokenId) -> StepOutput {
        let class = self.classes.class_of(target).expect("target is predictable");
        let mut class_probs = vec![0.0; self.classes.num_classes()];
        self.class_out.matvec_acc(h, &mut class_probs);
        softmax_in_place(&mut class_probs);
        let scale = self.word_out.scale();
        let mut word_probs: Vec<f64> = self
            .classes
            .members(class)
            .iter()
            .map(|w| scale * dot(self.word_out.stored_row(w.index()), h))
            .collect();
        softmax_in_place(&mut word_probs);
        let prob = class_probs[class] * word_probs[self.classes.slot[target.index()] as usize];
        StepOutput {
            class_probs,
            word_probs,
            class,
            prob,
        }
    }

    /// Full next-word distribution (indexed by id; `<s>` gets 0).
    pub fn distribution(&self, h: &[f64]) -> Vec<f64> {
        let mut class_probs = vec![0.0; self.classes.num_classes()];
        self.class_out.matvec_acc(h, &mut class_probs);
        softmax_in_place(&mut class_probs);
        let scale = self.word_out.scale();
        let mut out = vec![0.0; self.vocab.size()];
        for (c, members) in self.classes.members.iter().enumerate() {
            let mut scores: Vec<f64> = members
                .iter()
                .map(|w| scale * dot(self.word_out.stored_row(w.index()), h))
                .collect();
            softmax_in_place(&mut scores);
            for (w, p) in members.iter().zip(scores) {
                out[w.index()] = class_probs[c] * p;
            }
        }
        out
    }

    fn inputs_and_targets(&self, s: &Sentence) -> (Vec<TokenId>, Vec<TokenId>) {
        let mut inputs = Vec::with_capacity(s.len() + 1);
        inputs.push(self.vocab.bos_id());
        inputs.extend_from_slice(s.tokens());
        let mut targets = s.tokens().to_vec();
        targets.push(self.vocab.eos_id());
        (inputs, targets)
    }

    pub fn forward(&self, s: &Sentence) -> RnnForward {
        let (inputs, targets) = self.inputs_and_targets(s);
        let mut h = self.initial_hidden();
        let mut probs = Vec::with_capacity(targets.len());
        for (&x, &y) in inputs.iter().zip(&targets) {
            h = self.step(&h, x);
            probs.push(self.output(&h, y).prob);
        }
        RnnForward { probs, final_hidden: h }
    }

    /// Natural-log probability of a sentence including `</s>`.
    pub fn log_prob(&self, s: &Sentence) -> f64 {
        self.forward(s).probs.iter().map(|p| p.ln()).sum()
    }

    /// Cross entropy rate of a corpus in nats.
    pub fn entropy(&self, corpus: &Corpus) -> f64 {
        use crate::metrics::ordered_sum;
        use rayon::prelude::*;
        let total = ordered_sum(corpus.sentences().par_iter().map(|s| self.log_prob(s)));
        -total / corpus.unit_count(EosConvention::CountEos) as f64
    }

    /// Loss `−ln p(sentence)` and its truncated-BPTT gradient.
    pub fn sentence_gradient(&self, s: &Sentence) -> (f64, RnnGradient) {
        let (inputs, targets) = self.inputs_and_targets(s);
        let n = inputs.len();
        let h_dim = self.hidden;
        let mut states: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        states.push(self.initial_hidden());
        for &x in &inputs {
            let next = self.step(states.last().expect("non-empty"), x);
            states.push(next);
        }

        let mut grad = RnnGradient {
            input: BTreeMap::new(),
            recurrent: DenseMatrix::zeros(h_dim, h_dim),
            class_out: DenseMatrix::zeros(self.class_out.rows(), h_dim),
            word_out: BTreeMap::new(),
        };
        let mut loss = 0.0;
        let word_scale = self.word_out.scale();
        let mut dh = vec![0.0; h_dim];
        let mut delta = vec![0.0; h_dim];
        let mut back = vec![0.0; h_dim];

        for t in 0..n {
            // states[t + 1] is h(t)
            let h = &states[t + 1];
            let out = self.output(h, targets[t]);
            loss -= out.prob.ln();

            dh.fill(0.0);
            let mut d_class = out.class_probs;
            d_class[out.class] -= 1.0;
            grad.class_out.add_outer(&d_class, h);
            self.class_out.t_matvec_acc(&d_class, &mut dh);

            let target_slot = self.classes.slot[targets[t].index()] as usize;
            for (k, (w, &p)) in self.classes.members(out.class).iter().zip(&out.word_probs).enumerate() {
                let d = p - if k == target_slot { 1.0 } else { 0.0 };
                let row = grad.word_out.entry(w.index()).or_insert_with(|| vec![0.0; h_dim]);
                axpy(d, h, row);
                axpy(d * word_scale, self.word_out.stored_row(w.index()), &mut dh);
            }

            for (dl, (&g, &hv)) in delta.iter_mut().zip(dh.iter().zip(h)) {
                *dl = g * hv * (1.0 - hv);
            }
            for k in 0..self.bptt {
                let step = t - k;
                let prev = &states[step];
                let row = grad.input.entry(inputs[step].index()).or_insert_with(|| vec![0.0; h_dim]);
                axpy(1.0, &delta, row);
                grad.recurrent.add_outer(&delta, prev);
                if k + 1 == self.bptt || step == 0 {
                    break;
                }
                back.fill(0.0);
                self.recurrent.t_matvec_acc(&delta, &mut back);
                for (dl, (&b, &hv)) in delta.iter_mut().zip(back.iter().zip(prev)) {
                    *dl = b * hv * (1.0 - hv);
                }
            }
        }
        (loss, grad)
    }

    /// Number of scalar parameters.
    pub fn num_params(&self) -> usize {
        let v = self.vocab.size();
        v * self.hidden * 2 + self.hidden * self.hidden + self.class_out.rows() * self.hidden
    }

    /// Parameters flattened as `[input, recurrent, class_out, word_out]`, each row-major.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        let s = self.input.scale();
        for r in 0..self.vocab.size() {
            out.extend(self.input.stored_row(r).iter().map(|v| v * s));
        }
        out.extend_from_slice(self.recurrent.values());
        out.extend_from_slice(self.class_out.values());
        let s = self.word_out.scale();
        for r in 0..self.vocab.size() {
            out.extend(self.word_out.stored_row(r).iter().map(|v| v * s));
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch {
                expected: self.num_params().to_string(),
                actual: flat.len().to_string(),
            });
        }
        let (v, h, c) = (self.vocab.size(), self.hidden, self.class_out.rows());
        let (input, rest) = flat.split_at(v * h);
        let (recurrent, rest) = rest.split_at(h * h);
        let (class_out, word_out) = rest.split_at(c * h);
        self.input = ScaledRows::new(DenseMatrix::from_vec(v, h, input.to_vec())?);
        self.recurrent = DenseMatrix::from_vec(h, h, recurrent.to_vec())?;
        self.class_out = DenseMatrix::from_vec(c, h, class_out.to_vec())?;
        self.word_out = ScaledRows::new(DenseMatrix::from_vec(v, h, word_out.to_vec())?);
        Ok(())
    }

    /// Dense gradient in the [`Self::params_flat`] layout.
    pub fn gradient_flat(&self, g: &RnnGradient) -> Vec<f64> {
        let (v, h) = (self.vocab.size(), self.hidden);
        let mut input = vec![0.0; v * h];
        for (&r, row) in &g.input {
            input[r * h..(r + 1) * h].copy_from_slice(row);
        }
        let mut word = vec![0.0; v * h];
        for (&r, row) in &g.word_out {
            word[r * h..(r + 1) * h].copy_from_slice(row);
        }
        let mut out = input;
        out.extend_from_slice(g.recurrent.values());
        out.extend_from_slice(g.class_out.values());
        out.extend(word);
        out
    }

    fn apply(&mut self, mut g: RnnGradient, lr: f64, l2: f64, clip: Option<f64>) -> usize {
        let mut clipped = 0;
        if let Some(limit) = clip {
            clipped += clip_in_place(g.recurrent.values_mut(), limit);
            clipped += clip_in_place(g.class_out.values_mut(), limit);
            for row in g.input.values_mut().chain(g.word_out.values_mut()) {
                clipped += clip_in_place(row, limit);
            }
        }
        sgd_update(self.recurrent.values_mut(), g.recurrent.values(), lr, l2);
        sgd_update(self.class_out.values_mut(), g.class_out.values(), lr, l2);
        let decay = 1.0 - lr * l2;
        self.input.decay(decay);
        self.word_out.decay(decay);
        for (r, row) in &g.input {
            self.input.update_row(*r, row, lr);
        }
        for (r, row) in &g.word_out {
            self.word_out.update_row(*r, row, lr);
        }
        clipped
    }

    pub fn label(&self) -> String {
        "RNN".to_owned()
    }

    pub fn to_container(&self) -> Container {
        let meta = RnnMeta {
            hidden: self.hidden,
            classes: self.classes.num_classes(),
            bptt: self.bptt,
            label: self.label(),
            hidden_reading: format!("{} hidden units in a single recurrent layer", self.hidden),
            epochs: self.epochs.clone(),
        };
        let mut w = PayloadWriter::new();
        w.put_u32(self.hidden as u32);
        w.put_u32(self.classes.num_classes() as u32);
        for &c in &self.classes.class_of {
            w.put_u32(c);
        }
        w.put_f64s(&self.params_flat());
        Container::new(
            ModelKind::Rnn,
            serde_json::to_value(meta).expect("metadata serializes"),
            self.vocab.clone(),
            w.into_inner(),
        )
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(ModelKind::Rnn)?;
        let meta: RnnMeta = c.metadata_as()?;
        let mut r = PayloadReader::new(&c.payload);
        let hidden = r.get_u32()? as usize;
        let n_classes = r.get_u32()? as usize;
        let mut assignment = Vec::with_capacity(c.vocab.size());
        for _ in 0..c.vocab.size() {
            let class = r.get_u32()?;
            if class != NO_CLASS && class as usize >= n_classes {
                return Err(Error::format("rnn model", format!("class {class} out of range")));
            }
            assignment.push(class);
        }
        let classes = ClassMap::from_assignment(assignment);
        if hidden != meta.hidden || classes.num_classes() != n_classes {
            return Err(Error::format("rnn model", "header and payload disagree"));
        }
        let flat = r.get_f64s()?;
        if !r.is_empty() {
            return Err(Error::format("rnn model", "trailing bytes"));
        }
        let mut model = RnnModel::new(&c.vocab, classes, hidden, meta.bptt, 0);
        model.set_params_flat(&flat)?;
        model.epochs = meta.epochs;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

impl LanguageModel for RnnModel {
    fn log_score(&self, sentence: &Sentence) -> f64 {
        self.log_prob(sentence)
    }

    fn unit(&self) -> Unit {
        Unit::PerWord
    }

    fn is_normalized(&self) -> bool {
        true
    }

    fn label(&self) -> String {
        RnnModel::label(self)
    }
}

/// Trains a word-level RNN with validation-driven learning-rate halving.
///
/// An epoch whose validation entropy is worse than the best so far is rolled
/// back. Once an epoch improves by less than `halve_below` (relative), the
/// learning rate is halved after every epoch; training stops when a halving
/// epoch improves by less than `stop_below` or fails to improve at all.
pub fn rnn_train(train: &Corpus, valid: &Corpus, vocab: &Vocabulary, cfg: &RnnConfig) -> Result<RnnModel> {
    cfg.validate()?;
    let classes = ClassMap::by_frequency(train, vocab, cfg.classes);
    let mut model = RnnModel::new(vocab, classes, cfg.hidden, cfg.bptt, cfg.sgd.seed);
    let mut best_entropy = f64::INFINITY;
    let mut best = model.clone();
    let mut lr = cfg.sgd.learning_rate;
    let mut halving = false;
    let mut history = Vec::new();

    for epoch in 1..=cfg.sgd.max_epochs {
        let mut train_loss = 0.0;
        let mut clipped = 0;
        for s in train.sentences() {
            let (loss, grad) = model.sentence_gradient(s);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("rnn training diverged in epoch {epoch} (loss {loss})")));
            }
            train_loss += loss;
            clipped += model.apply(grad, lr, cfg.sgd.l2, cfg.sgd.clip);
        }
        if clipped > 0 {
            log::debug!("epoch {epoch}: clipped {clipped} gradient entries");
        }
        let train_entropy = train_loss / train.unit_count(EosConvention::CountEos) as f64;
        let valid_entropy = model.entropy(valid);
        if !valid_entropy.is_finite() {
            return Err(Error::Numerical(format!("rnn validation entropy is {valid_entropy} in epoch {epoch}")));
        }
        let accepted = valid_entropy < best_entropy;
        let improvement = if best_entropy.is_finite() {
            (best_entropy - valid_entropy) / best_entropy
        } else {
            f64::INFINITY
        };
        log::info!(
            "rnn epoch {epoch}: lr {lr:.5} train {train_entropy:.4} valid {valid_entropy:.4} (ppl {:.2}){}",
            valid_entropy.exp(),
            if accepted { "" } else { " rejected" }
        );
        history.push(RnnEpochStats {
            epoch,
            learning_rate: lr,
            train_entropy,
            valid_entropy,
            accepted,
            clipped,
        });

        let mut stop = false;
        if accepted {
            best_entropy = valid_entropy;
            best = model.clone();
            if halving && improvement < cfg.stop_below {
                stop = true;
            }
            if cfg.sgd.lr_decay && improvement < cfg.halve_below {
                halving = true;
            }
        } else {
            model = best.clone();
            if !cfg.sgd.lr_decay || halving {
                stop = true;
            } else {
                halving = true;
            }
        }
        if stop {
            break;
        }
        if halving {
            lr /= 2.0;
        }
    }
    best.epochs = history;
    Ok(best)
}
