//! Sentence-level recurrent energy model.
//!
//! Words are composed left to right into a phrase vector, and every prefix
//! contributes a scalar to the sentence energy:
//!
//! ```text
//! x(0) = 0
//! x(t) = σ(U_x x(t−1) + U_w[w(t)])
//! y(t) = W · x(t)
//! S(W) = Σ_t y(t)          p(W) ∝ exp(−S(W))
//! ```
//!
//! The normalizer of `p` is never computed: the model is only ever compared
//! against itself on a sentence and a distorted copy of it, where it cancels.
//!
//! Training minimizes the hinge `max{0, 1 + S(W) − S(Ŵ)}` over pairs of a
//! training sentence `W` and a freshly distorted copy `Ŵ`, so that genuine
//! sentences end up at least one unit of energy below their corruptions.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::container::{Container, ModelKind, PayloadReader, PayloadWriter};
use crate::corpus::{Corpus, Sentence, TokenId, Vocabulary};
use crate::distortion::{distort_corpus, distort_sentence, DistortedPair, DistortionSpec};
use crate::error::{Error, Result};
use crate::metrics::{LanguageModel, Unit};
use crate::neural::{axpy, clip_in_place, dot, sgd_update, sigmoid, DenseMatrix, ScaledRows, SgdConfig};
use crate::seeding::{derive_seed, substream};

const INIT_SCALE: f64 = 0.1;
pub const MARGIN: f64 = 1.0;
const OBJECTIVE: &str = "max(0, 1 + S(W) - S(W_distorted))";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrnnConfig {
    pub latent: usize,
    /// Channel generating the negatives; its seed drives negative sampling.
    pub distortion: DistortionSpec,
    pub sgd: SgdConfig,
    /// Visit training sentences in a fresh seeded order every epoch.
    pub shuffle: bool,
}

impl Default for SrnnConfig {
    fn default() -> Self {
        SrnnConfig {
            latent: 75,
            distortion: DistortionSpec::from_level(0.1, 0.5, 1).expect("valid level"),
            sgd: SgdConfig {
                learning_rate: 0.1,
                l2: 1e-3,
                max_epochs: 10,
                seed: 1,
                lr_decay: false,
                clip: Some(15.0),
            },
            shuffle: true,
        }
    }
}

/// Per-epoch training summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HingeBatchStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub violations: usize,
    pub pairs: usize,
    /// Mean `S(Ŵ) − S(W)` over the epoch's training pairs, each measured just
    /// before its update (the same averaging as `mean_loss`).
    pub train_contrastive_entropy: f64,
    /// Mean `S(Ŵ) − S(W)` under the end-of-epoch parameters, on a copy of the
    /// training set distorted once with a fixed seed.
    pub snapshot_contrastive_entropy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SrnnMeta {
    latent: usize,
    label: String,
    training_distortion: DistortionSpec,
    objective: String,
    /// The margin is oriented so that distorted sentences get the higher energy.
    sign_corrected: bool,
    epochs: Vec<HingeBatchStats>,
}

#[derive(Clone, Debug)]
pub struct SrnnModel {
    vocab: Vocabulary,
    latent: usize,
    recurrent: DenseMatrix,
    /// Word block of the composition matrix, one row per word id.
    word: ScaledRows,
    score: Vec<f64>,
    training_distortion: DistortionSpec,
    epochs: Vec<HingeBatchStats>,
}

/// Gradient of a sentence score (or of a hinge over a pair).
#[derive(Clone, Debug)]
pub struct SrnnGradient {
    pub recurrent: DenseMatrix,
    pub word: BTreeMap<usize, Vec<f64>>,
    pub score: Vec<f64>,
}

impl SrnnGradient {
    fn zeros(latent: usize) -> Self {
        SrnnGradient {
            recurrent: DenseMatrix::zeros(latent, latent),
            word: BTreeMap::new(),
            score: vec![0.0; latent],
        }
    }

    fn add_scaled(&mut self, alpha: f64, other: &SrnnGradient) {
        axpy(alpha, other.recurrent.values(), self.recurrent.values_mut());
        axpy(alpha, &other.score, &mut self.score);
        for (&r, row) in &other.word {
            let dst = self.word.entry(r).or_insert_with(|| vec![0.0; row.len()]);
            axpy(alpha, row, dst);
        }
    }
}

impl SrnnModel {
    /// Fresh model with weights uniform in `[-0.1, 0.1]`.
    pub fn new(vocab: &Vocabulary, latent: usize, training_distortion: DistortionSpec, seed: u64) -> Self {
        let mut rng = substream(seed, 0);
        let recurrent = DenseMatrix::uniform(latent, latent, INIT_SCALE, &mut rng);
        let word = DenseMatrix::uniform(vocab.size(), latent, INIT_SCALE, &mut rng);
        let score = DenseMatrix::uniform(1, latent, INIT_SCALE, &mut rng).values().to_vec();
        SrnnModel {
            vocab: vocab.clone(),
            latent,
            recurrent,
            word: ScaledRows::new(word),
            score,
            training_distortion,
            epochs: Vec::new(),
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn latent_size(&self) -> usize {
        self.latent
    }

    pub fn training_distortion(&self) -> &DistortionSpec {
        &self.training_distortion
    }

    pub fn epochs(&self) -> &[HingeBatchStats] {
        &self.epochs
    }

    /// Row label such as `sRNN-75(10)`.
    pub fn label(&self) -> String {
        format!(
            "sRNN-{}({})",
            self.latent,
            (self.training_distortion.level() * 100.0).round() as u32
        )
    }

    fn compose(&self, prev: &[f64], word: TokenId) -> Vec<f64> {
        let mut x = vec![0.0; self.latent];
        self.recurrent.matvec_acc(prev, &mut x);
        axpy(self.word.scale(), self.word.stored_row(word.index()), &mut x);
        for v in &mut x {
            *v = sigmoid(*v);
        }
        x
    }

    fn states(&self, s: &Sentence) -> Vec<Vec<f64>> {
        let mut states = Vec::with_capacity(s.len() + 1);
        states.push(vec![0.0; self.latent]);
        for &w in s.tokens() {
            let next = self.compose(states.last().expect("non-empty"), w);
            states.push(next);
        }
        states
    }

    /// Per-prefix outputs `y(1) .. y(N)`.
    pub fn step_scores(&self, s: &Sentence) -> Vec<f64> {
        self.states(s)[1..].iter().map(|x| dot(&self.score, x)).collect()
    }

    /// Sentence energy `S(W)`.
    pub fn score(&self, s: &Sentence) -> f64 {
        let mut x = vec![0.0; self.latent];
        let mut total = 0.0;
        for &w in s.tokens() {
            x = self.compose(&x, w);
            total += dot(&self.score, &x);
        }
        total
    }

    /// Unnormalized per-sentence entropy; identical to [`Self::score`].
    pub fn sentence_entropy(&self, s: &Sentence) -> f64 {
        self.score(s)
    }

    pub fn hinge_loss(&self, pair: &DistortedPair) -> f64 {
        assert_eq!(
            pair.original.len(),
            pair.distorted.len(),
            "hinge pairs must have equal lengths"
        );
        (MARGIN + self.score(&pair.original) - self.score(&pair.distorted)).max(0.0)
    }

    /// `S(W)` and its gradient by backpropagation through the whole sentence.
    pub fn score_gradient(&self, s: &Sentence) -> (f64, SrnnGradient) {
        let states = self.states(s);
        let mut grad = SrnnGradient::zeros(self.latent);
        let mut total = 0.0;
        for x in &states[1..] {
            total += dot(&self.score, x);
            axpy(1.0, x, &mut grad.score);
        }

        // dx carries ∂S/∂x(t) from later steps
        let mut dx = vec![0.0; self.latent];
        let mut delta = vec![0.0; self.latent];
        for t in (1..states.len()).rev() {
            let x = &states[t];
            for ((d, &g), (&w, &xv)) in delta.iter_mut().zip(&dx).zip(self.score.iter().zip(x)) {
                *d = (g + w) * xv * (1.0 - xv);
            }
            let w = s.tokens()[t - 1];
            let row = grad.word.entry(w.index()).or_insert_with(|| vec![0.0; self.latent]);
            axpy(1.0, &delta, row);
            grad.recurrent.add_outer(&delta, &states[t - 1]);
            dx.fill(0.0);
            self.recurrent.t_matvec_acc(&delta, &mut dx);
        }
        (total, grad)
    }

    /// Hinge loss of `pair` and its gradient (zero when the margin holds).
    pub fn hinge_gradient(&self, pair: &DistortedPair) -> (f64, SrnnGradient) {
        let (gap, grad) = self.margin_gradient(pair);
        ((MARGIN - gap).max(0.0), grad)
    }

    /// Energy gap `S(Ŵ) − S(W)` and the hinge gradient at it.
    fn margin_gradient(&self, pair: &DistortedPair) -> (f64, SrnnGradient) {
        assert_eq!(pair.original.len(), pair.distorted.len(), "hinge pairs must have equal lengths");
        let (s_orig, g_orig) = self.score_gradient(&pair.original);
        let (s_dist, g_dist) = self.score_gradient(&pair.distorted);
        let gap = s_dist - s_orig;
        let mut grad = SrnnGradient::zeros(self.latent);
        if gap < MARGIN {
            grad.add_scaled(1.0, &g_orig);
            grad.add_scaled(-1.0, &g_dist);
        }
        (gap, grad)
    }

    pub fn num_params(&self) -> usize {
        self.latent * self.latent + self.vocab.size() * self.latent + self.latent
    }

    /// Parameters flattened as `[recurrent, word, score]`, each row-major.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend_from_slice(self.recurrent.values());
        let s = self.word.scale();
        for r in 0..self.vocab.size() {
            out.extend(self.word.stored_row(r).iter().map(|v| v * s));
        }
        out.extend_from_slice(&self.score);
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch {
                expected: self.num_params().to_string(),
                actual: flat.len().to_string(),
            });
        }
        let l = self.latent;
        let (recurrent, rest) = flat.split_at(l * l);
        let (word, score) = rest.split_at(self.vocab.size() * l);
        self.recurrent = DenseMatrix::from_vec(l, l, recurrent.to_vec())?;
        self.word = ScaledRows::new(DenseMatrix::from_vec(self.vocab.size(), l, word.to_vec())?);
        self.score = score.to_vec();
        Ok(())
    }

    pub fn gradient_flat(&self, g: &SrnnGradient) -> Vec<f64> {
        let l = self.latent;
        let mut out = g.recurrent.values().to_vec();
        let mut word = vec![0.0; self.vocab.size() * l];
        for (&r, row) in &g.word {
            word[r * l..(r + 1) * l].copy_from_slice(row);
        }
        out.extend(word);
        out.extend_from_slice(&g.score);
        out
    }

    /// One SGD step with ℓ2 decay on every parameter; returns clipped entries.
    fn apply(&mut self, mut g: SrnnGradient, lr: f64, l2: f64, clip: Option<f64>) -> usize {
        let mut clipped = 0;
        if let Some(limit) = clip {
            clipped += clip_in_place(g.recurrent.values_mut(), limit);
            clipped += clip_in_place(&mut g.score, limit);
            for row in g.word.values_mut() {
                clipped += clip_in_place(row, limit);
            }
        }
        sgd_update(self.recurrent.values_mut(), g.recurrent.values(), lr, l2);
        sgd_update(&mut self.score, &g.score, lr, l2);
        self.word.decay(1.0 - lr * l2);
        for (r, row) in &g.word {
            self.word.update_row(*r, row, lr);
        }
        clipped
    }

    pub fn to_container(&self) -> Container {
        let meta = SrnnMeta {
            latent: self.latent,
            label: self.label(),
            training_distortion: self.training_distortion,
            objective: OBJECTIVE.into(),
            sign_corrected: true,
            epochs: self.epochs.clone(),
        };
        let mut w = PayloadWriter::new();
        w.put_u32(self.latent as u32);
        w.put_f64s(&self.params_flat());
        Container::new(
            ModelKind::Srnn,
            serde_json::to_value(meta).expect("metadata serializes"),
            self.vocab.clone(),
            w.into_inner(),
        )
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(ModelKind::Srnn)?;
        let meta: SrnnMeta = c.metadata_as()?;
        let mut r = PayloadReader::new(&c.payload);
        let latent = r.get_u32()? as usize;
        if latent != meta.latent || latent == 0 {
            return Err(Error::format("srnn model", "header and payload disagree"));
        }
        let flat = r.get_f64s()?;
        if !r.is_empty() {
            return Err(Error::format("srnn model", "trailing bytes"));
        }
        let mut model = SrnnModel::new(&c.vocab, latent, meta.training_distortion, 0);
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

impl LanguageModel for SrnnModel {
    fn log_score(&self, sentence: &Sentence) -> f64 {
        -self.score(sentence)
    }

    fn unit(&self) -> Unit {
        Unit::PerSentence
    }

    fn is_normalized(&self) -> bool {
        false
    }

    fn label(&self) -> String {
        SrnnModel::label(self)
    }
}

/// Mean `S(Ŵ) − S(W)` over `pairs`.
pub fn mean_energy_gap(model: &SrnnModel, pairs: &[DistortedPair]) -> f64 {
    use crate::metrics::ordered_sum;
    use rayon::prelude::*;
    let total = ordered_sum(
        pairs
            .par_iter()
            .map(|p| model.score(&p.distorted) - model.score(&p.original)),
    );
    total / pairs.len() as f64
}

/// Margin training against freshly distorted negatives.
///
/// Every epoch draws a new distorted partner for each training sentence from
/// `cfg.distortion` (stream keyed by epoch and sentence index) and takes one
/// SGD step per pair.
pub fn srnn_train(train: &Corpus, vocab: &Vocabulary, cfg: &SrnnConfig) -> Result<SrnnModel> {
    cfg.sgd.validate()?;
    if cfg.latent == 0 {
        return Err(Error::InvalidArgument("latent size must be positive".into()));
    }
    let mut model = SrnnModel::new(vocab, cfg.latent, cfg.distortion, cfg.sgd.seed);
    let lr = cfg.sgd.learning_rate;

    let monitor_spec = cfg.distortion.with_seed(derive_seed(cfg.distortion.seed, u64::MAX));
    let monitor = distort_corpus(train, &monitor_spec, vocab);

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.sgd.max_epochs {
        if cfg.shuffle {
            order.shuffle(&mut substream(derive_seed(cfg.sgd.seed, epoch as u64), 1));
        }
        let epoch_seed = derive_seed(cfg.distortion.seed, epoch as u64);
        let mut loss_sum = 0.0;
        let mut gap_sum = 0.0;
        let mut violations = 0;
        let mut clipped = 0;
        for &i in &order {
            let sentence = &train.sentences()[i];
            let mut rng = substream(epoch_seed, i as u64);
            let pair = distort_sentence(sentence, &cfg.distortion, &mut rng, vocab);
            let (gap, grad) = model.margin_gradient(&pair);
            if !gap.is_finite() {
                return Err(Error::Numerical(format!("srnn training diverged in epoch {epoch}")));
            }
            let loss = (MARGIN - gap).max(0.0);
            loss_sum += loss;
            gap_sum += gap;
            if loss > 0.0 {
                violations += 1;
            }
            clipped += model.apply(grad, lr, cfg.sgd.l2, cfg.sgd.clip);
        }
        if clipped > 0 {
            log::debug!("srnn epoch {epoch}: clipped {clipped} gradient entries");
        }
        let stats = HingeBatchStats {
            epoch,
            mean_loss: loss_sum / train.len() as f64,
            violations,
            pairs: train.len(),
            train_contrastive_entropy: gap_sum / train.len() as f64,
            snapshot_contrastive_entropy: mean_energy_gap(&model, &monitor),
        };
        if !stats.snapshot_contrastive_entropy.is_finite() {
            return Err(Error::Numerical(format!("srnn scores became non-finite in epoch {epoch}")));
        }
        log::info!(
            "{} epoch {epoch}: mean hinge {:.4}, violations {}/{}, train H_C {:.4} (end of epoch {:.4})",
            model.label(),
            stats.mean_loss,
            stats.violations,
            stats.pairs,
            stats.train_contrastive_entropy,
            stats.snapshot_contrastive_entropy
        );
        model.epochs.push(stats);
    }
    Ok(model)
}
