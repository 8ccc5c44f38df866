//! Word-count preserving noisy channel.
//!
//! Each position of a sentence independently draws one of three outcomes:
//! keep the token, substitute it with a different random word, or transpose
//! it with another position of the same sentence. Positions are visited left
//! to right on the working copy, so a token moved by an earlier transposition
//! can be moved again.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sentence, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::seeding::substream;

const SUM_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub x_none: f64,
    pub x_sub: f64,
    pub x_trans: f64,
    pub seed: u64,
}

impl DistortionSpec {
    pub fn new(x_none: f64, x_sub: f64, x_trans: f64, seed: u64) -> Result<Self> {
        let probs = [x_none, x_sub, x_trans];
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "distortion probabilities must be finite and non-negative, got {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "distortion probabilities must sum to 1, got {sum}"
            )));
        }
        Ok(DistortionSpec {
            x_none,
            x_sub,
            x_trans,
            seed,
        })
    }

    /// Channel touching a fraction `level` of positions, of which a share
    /// `sub_share` are substitutions and the rest transpositions.
    pub fn from_level(level: f64, sub_share: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&level) || !(0.0..=1.0).contains(&sub_share) {
            return Err(Error::InvalidArgument(format!(
                "distortion level and substitution share must lie in [0, 1], got {level} and {sub_share}"
            )));
        }
        let x_sub = level * sub_share;
        let x_trans = level - x_sub;
        Self::new(1.0 - level, x_sub, x_trans, seed)
    }

    pub fn identity(seed: u64) -> Self {
        DistortionSpec {
            x_none: 1.0,
            x_sub: 0.0,
            x_trans: 0.0,
            seed,
        }
    }

    /// Aggregate distortion level `x_sub + x_trans`.
    pub fn level(&self) -> f64 {
        self.x_sub + self.x_trans
    }

    pub fn with_seed(self, seed: u64) -> Self {
        DistortionSpec { seed, ..self }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Outcome {
        let u: f64 = rng.random();
        // the explicit zero checks keep rounding in the thresholds from
        // producing an outcome whose probability is exactly zero
        if u < self.x_none {
            Outcome::Keep
        } else if self.x_sub > 0.0 && (u < self.x_none + self.x_sub || self.x_trans == 0.0) {
            Outcome::Substitute
        } else if self.x_trans > 0.0 {
            Outcome::Transpose
        } else {
            Outcome::Keep
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Outcome {
    Keep,
    Substitute,
    Transpose,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistortedPair {
    pub original: Sentence,
    pub distorted: Sentence,
    /// Positions whose own draw was a substitution or transposition that took effect.
    pub touched: usize,
    pub substitutions: usize,
    pub transpositions: usize,
}

impl DistortedPair {
    pub fn identity(sentence: Sentence) -> Self {
        DistortedPair {
            distorted: sentence.clone(),
            original: sentence,
            touched: 0,
            substitutions: 0,
            transpositions: 0,
        }
    }
}

/// Runs one sentence through the channel.
pub fn distort_sentence<R: Rng + ?Sized>(
    sentence: &Sentence,
    spec: &DistortionSpec,
    rng: &mut R,
    vocab: &Vocabulary,
) -> DistortedPair {
    let mut tokens: Vec<TokenId> = sentence.tokens().to_vec();
    let len = tokens.len();
    let first_word = vocab.word_ids().next().map_or(0, |id| id.0);
    let num_words = vocab.num_words() as u32;
    let (mut substitutions, mut transpositions) = (0, 0);

    for i in 0..len {
        match spec.draw(rng) {
            Outcome::Keep => {}
            Outcome::Substitute => {
                let current = tokens[i];
                if vocab.is_reserved(current) {
                    if num_words == 0 {
                        continue;
                    }
                    tokens[i] = TokenId(first_word + rng.random_range(0..num_words));
                } else {
                    if num_words < 2 {
                        continue;
                    }
                    // uniform over the other words: skip the current id
                    let mut id = first_word + rng.random_range(0..num_words - 1);
                    if id >= current.0 {
                        id += 1;
                    }
                    tokens[i] = TokenId(id);
                }
                substitutions += 1;
            }
            Outcome::Transpose => {
                if len < 2 {
                    continue;
                }
                let mut j = rng.random_range(0..len - 1);
                if j >= i {
                    j += 1;
                }
                tokens.swap(i, j);
                transpositions += 1;
            }
        }
    }

    DistortedPair {
        original: sentence.clone(),
        distorted: Sentence::new(tokens).expect("length preserved"),
        touched: substitutions + transpositions,
        substitutions,
        transpositions,
    }
}

/// Distorts every sentence of `corpus`; sentence `i` uses stream `i` of `spec.seed`.
pub fn distort_corpus(corpus: &Corpus, spec: &DistortionSpec, vocab: &Vocabulary) -> Vec<DistortedPair> {
    corpus
        .sentences()
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = substream(spec.seed, i as u64);
            distort_sentence(s, spec, &mut rng, vocab)
        })
        .collect()
}

/// Sidecar metadata written next to a distorted corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionMeta {
    pub spec: DistortionSpec,
    pub level: f64,
    pub sentences: usize,
    pub positions: usize,
    pub touched: usize,
    pub substitutions: usize,
    pub transpositions: usize,
    pub toolkit_version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl DistortionMeta {
    pub fn summarize(spec: &DistortionSpec, pairs: &[DistortedPair]) -> Self {
        DistortionMeta {
            spec: *spec,
            level: spec.level(),
            sentences: pairs.len(),
            positions: pairs.iter().map(|p| p.original.len()).sum(),
            touched: pairs.iter().map(|p| p.touched).sum(),
            substitutions: pairs.iter().map(|p| p.substitutions).sum(),
            transpositions: pairs.iter().map(|p| p.transpositions).sum(),
            toolkit_version: crate::VERSION.to_owned(),
            config_hash: None,
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// Writes the distorted side of `pairs` one sentence per line, plus `<path>.meta.json`.
pub fn write_distorted(path: &Path, pairs: &[DistortedPair], vocab: &Vocabulary, meta: &DistortionMeta) -> Result<()> {
    let mut buf = Vec::new();
    for p in pairs {
        writeln!(buf, "{}", vocab.decode(&p.distorted)).expect("writing to a Vec cannot fail");
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    let sidecar = sidecar_path(path);
    let mut json = serde_json::to_string_pretty(meta).expect("metadata serializes");
    json.push('\n');
    std::fs::write(&sidecar, json).map_err(|e| Error::io(sidecar, e))
}
