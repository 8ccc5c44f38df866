//! Perplexity, contrastive entropy and the contrastive entropy ratio.
//!
//! All entropies are in nats. For a test set `T`, its distorted copy `T̂` and a
//! model with (possibly unnormalized) log-score `ln p̃`:
//!
//! ```text
//! H_C(T; d)        = (1/N) Σ [ln p̃(W) − ln p̃(Ŵ)]
//! H_CR(T; d_b, d)  = H_C(T; d) / H_C(T; d_b)
//! ```
//!
//! `N` counts predicted words (including `</s>`) for word-level models and
//! sentences for sentence-level models. Any normalizer of `p̃` cancels in the
//! difference, which is what makes the metric usable for energy models.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, EosConvention, Sentence, Vocabulary};
use crate::distortion::{distort_corpus, DistortedPair, DistortionSpec};
use crate::error::{Error, Result};
use crate::seeding::derive_seed;

/// Normalization unit of a model's score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    PerWord,
    PerSentence,
}

/// Anything that assigns a sentence a log-score.
pub trait LanguageModel: Sync {
    /// Natural-log score of `sentence`. For normalized models this is the log
    /// probability including the end-of-sentence event.
    fn log_score(&self, sentence: &Sentence) -> f64;

    fn unit(&self) -> Unit;

    /// Whether `exp(log_score)` is a probability (perplexity is defined).
    fn is_normalized(&self) -> bool;

    fn label(&self) -> String;
}

type Scorer<'a> = Box<dyn Fn(&Sentence) -> f64 + Send + Sync + 'a>;

/// A labelled scoring function with its normalization unit.
pub struct ScoredModel<'a> {
    scorer: Scorer<'a>,
    pub unit: Unit,
    pub normalized: bool,
    pub label: String,
}

impl fmt::Debug for ScoredModel<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScoredModel")
            .field("label", &self.label)
            .field("unit", &self.unit)
            .field("normalized", &self.normalized)
            .finish()
    }
}

impl<'a> ScoredModel<'a> {
    pub fn new(
        label: impl Into<String>,
        unit: Unit,
        normalized: bool,
        scorer: impl Fn(&Sentence) -> f64 + Send + Sync + 'a,
    ) -> Self {
        ScoredModel {
            scorer: Box::new(scorer),
            unit,
            normalized,
            label: label.into(),
        }
    }

    pub fn from_model<M: LanguageModel + ?Sized>(model: &'a M) -> Self {
        ScoredModel {
            scorer: Box::new(move |s| model.log_score(s)),
            unit: model.unit(),
            normalized: model.is_normalized(),
            label: model.label(),
        }
    }

    /// Multiplies every log-score by `k`. The result is no longer normalized
    /// unless `k == 1`.
    pub fn scaled(self, k: f64) -> ScoredModel<'a> {
        let inner = self.scorer;
        ScoredModel {
            scorer: Box::new(move |s| k * inner(s)),
            unit: self.unit,
            normalized: self.normalized && k == 1.0,
            label: format!("{}×{k}", self.label),
        }
    }

    pub fn score(&self, sentence: &Sentence) -> f64 {
        (self.scorer)(sentence)
    }
}

/// Sums in index order, so results do not depend on how work was split
/// across threads.
pub(crate) fn ordered_sum<I>(values: I) -> f64
where
    I: IndexedParallelIterator<Item = f64>,
{
    let collected: Vec<f64> = values.collect();
    collected.iter().sum()
}

/// Cross entropy rate `−(1/n) ln m(T)` of a normalized word-level model.
pub fn cross_entropy(model: &ScoredModel<'_>, test: &Corpus, conv: EosConvention) -> Result<f64> {
    if !model.normalized || model.unit != Unit::PerWord {
        return Err(Error::Unnormalized(model.label.clone()));
    }
    let total = ordered_sum(test.sentences().par_iter().map(|s| model.score(s)));
    Ok(-total / test.unit_count(conv) as f64)
}

/// `exp` of the cross entropy rate.
pub fn perplexity(model: &ScoredModel<'_>, test: &Corpus, conv: EosConvention) -> Result<f64> {
    cross_entropy(model, test, conv).map(f64::exp)
}

fn normalizer(unit: Unit, pairs: &[DistortedPair], conv: EosConvention) -> f64 {
    match unit {
        Unit::PerSentence => pairs.len() as f64,
        Unit::PerWord => {
            let words: usize = pairs.iter().map(|p| p.original.len()).sum();
            match conv {
                EosConvention::CountEos => (words + pairs.len()) as f64,
                EosConvention::WordsOnly => words as f64,
            }
        }
    }
}

/// Contrastive entropy of `model` over `pairs`, in nats per unit.
pub fn contrastive_entropy(model: &ScoredModel<'_>, pairs: &[DistortedPair], conv: EosConvention) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let diff = ordered_sum(
        pairs
            .par_iter()
            .map(|p| model.score(&p.original) - model.score(&p.distorted)),
    );
    diff / normalizer(model.unit, pairs, conv)
}

const RATIO_BASE_EPSILON: f64 = 1e-9;

/// Contrastive entropy ratio `h_c / h_c_base`.
pub fn contrastive_ratio(h_c: f64, h_c_base: f64) -> Result<f64> {
    if h_c_base.abs() < RATIO_BASE_EPSILON {
        return Err(Error::UndefinedRatio(h_c_base));
    }
    Ok(h_c / h_c_base)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyComparison {
    Higher,
    Lower,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioComparison {
    HigherOrSimilar,
    Lower,
}

/// Reading of an (H_C, H_CR) comparison between a model and a reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Superior,
    ScalingIssues,
    Indeterminate,
    Inferior,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Superior => "superior",
            Verdict::ScalingIssues => "scaling issues",
            Verdict::Indeterminate => "indeterminate",
            Verdict::Inferior => "inferior",
        })
    }
}

pub fn verdict(h_c: EntropyComparison, h_cr: RatioComparison) -> Verdict {
    use EntropyComparison as E;
    use RatioComparison as R;
    match (h_c, h_cr) {
        (E::Higher, R::HigherOrSimilar) => Verdict::Superior,
        (E::Higher, R::Lower) => Verdict::ScalingIssues,
        (E::Lower, R::HigherOrSimilar) => Verdict::Indeterminate,
        (E::Lower, R::Lower) => Verdict::Inferior,
    }
}

pub const DEFAULT_SIMILARITY: f64 = 0.05;

pub fn compare_entropy(candidate: f64, reference: f64) -> EntropyComparison {
    if candidate > reference {
        EntropyComparison::Higher
    } else {
        EntropyComparison::Lower
    }
}

/// Ratios within `similarity` (relative to the reference) count as similar.
pub fn compare_ratio(candidate: f64, reference: f64, similarity: f64) -> RatioComparison {
    if candidate >= reference - similarity * reference.abs() {
        RatioComparison::HigherOrSimilar
    } else {
        RatioComparison::Lower
    }
}

/// Distortion levels are keyed in per-mille so they can be map keys.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Level(pub u32);

impl Level {
    pub fn from_fraction(d: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&d) {
            return Err(Error::InvalidArgument(format!("distortion level {d} outside [0, 1]")));
        }
        Ok(Level((d * 1000.0).round() as u32))
    }

    pub fn fraction(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn percent(self) -> f64 {
        self.0 as f64 / 10.0
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}%", self.percent())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub mean: f64,
    /// Sample standard deviation across runs (0 for a single run).
    pub std_dev: f64,
    pub per_run: Vec<f64>,
}

impl LevelStats {
    fn from_runs(per_run: Vec<f64>) -> Self {
        let n = per_run.len() as f64;
        let mean = per_run.iter().sum::<f64>() / n;
        let std_dev = if per_run.len() > 1 {
            (per_run.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        LevelStats { mean, std_dev, per_run }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub unit: Unit,
    pub perplexity: Option<f64>,
    pub h_c: BTreeMap<Level, LevelStats>,
    /// `(level, base)` → ratio of mean contrastive entropies.
    pub h_cr: Vec<RatioEntry>,
    pub base: Level,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioEntry {
    pub level: Level,
    pub base: Level,
    pub ratio: Option<f64>,
}

impl MetricsReport {
    pub fn mean_h_c(&self, level: Level) -> Option<f64> {
        self.h_c.get(&level).map(|s| s.mean)
    }

    pub fn ratio(&self, level: Level) -> Option<f64> {
        self.h_cr.iter().find(|e| e.level == level).and_then(|e| e.ratio)
    }

    /// Table-1 reading of this report against `reference` at `level`.
    pub fn verdict_against(&self, reference: &MetricsReport, level: Level, similarity: f64) -> Option<Verdict> {
        let hc = compare_entropy(self.mean_h_c(level)?, reference.mean_h_c(level)?);
        let hcr = compare_ratio(self.ratio(level)?, reference.ratio(level)?, similarity);
        Some(verdict(hc, hcr))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationPlan {
    /// Distortion levels as fractions in `[0, 1]`, strictly increasing.
    pub levels: Vec<f64>,
    pub base: f64,
    pub runs: usize,
    pub seed: u64,
    /// Share of distorted positions that are substitutions.
    pub sub_share: f64,
    pub eos: EosConvention,
}

impl Default for EvaluationPlan {
    fn default() -> Self {
        EvaluationPlan {
            levels: vec![0.1, 0.3, 0.5],
            base: 0.1,
            runs: 10,
            seed: 1,
            sub_share: 0.5,
            eos: EosConvention::CountEos,
        }
    }
}

impl EvaluationPlan {
    pub fn validate(&self) -> Result<(Vec<Level>, Level)> {
        if self.levels.is_empty() {
            return Err(Error::InvalidArgument("at least one distortion level is required".into()));
        }
        if self.runs == 0 {
            return Err(Error::InvalidArgument("at least one run is required".into()));
        }
        let levels = self
            .levels
            .iter()
            .map(|&d| Level::from_fraction(d))
            .collect::<Result<Vec<_>>>()?;
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("distortion levels must be strictly increasing".into()));
        }
        let base = Level::from_fraction(self.base)?;
        if !levels.contains(&base) {
            return Err(Error::InvalidArgument(format!("base level {base} is not among the levels")));
        }
        Ok((levels, base))
    }

    /// Channel seed for `run` at `level`; identical across models so every
    /// model sees the same distorted sets.
    pub fn channel_seed(&self, run: usize, level: Level) -> u64 {
        derive_seed(derive_seed(self.seed, run as u64), level.0 as u64)
    }
}

/// Averages contrastive entropy over `plan.runs` independently distorted
/// copies of `test` at every level, and reports ratio-of-means.
pub fn averaged_evaluation(
    model: &ScoredModel<'_>,
    test: &Corpus,
    vocab: &Vocabulary,
    plan: &EvaluationPlan,
) -> Result<MetricsReport> {
    let (levels, base) = plan.validate()?;

    let perplexity = if model.normalized && model.unit == Unit::PerWord {
        Some(perplexity(model, test, plan.eos)?)
    } else {
        None
    };

    let original: Vec<f64> = test.sentences().par_iter().map(|s| model.score(s)).collect();
    let units = |pairs: &[DistortedPair]| normalizer(model.unit, pairs, plan.eos);

    let mut h_c = BTreeMap::new();
    for &level in &levels {
        let per_run: Vec<f64> = (0..plan.runs)
            .into_par_iter()
            .map(|run| -> Result<f64> {
                let spec = DistortionSpec::from_level(level.fraction(), plan.sub_share, plan.channel_seed(run, level))?;
                let pairs = distort_corpus(test, &spec, vocab);
                let diff = ordered_sum(
                    pairs
                        .par_iter()
                        .zip(original.par_iter())
                        .map(|(p, orig)| orig - model.score(&p.distorted)),
                );
                let value = diff / units(&pairs);
                if !value.is_finite() {
                    return Err(Error::Numerical(format!(
                        "{}: non-finite contrastive entropy at {level}",
                        model.label
                    )));
                }
                Ok(value)
            })
            .collect::<Result<_>>()?;
        h_c.insert(level, LevelStats::from_runs(per_run));
    }

    let base_mean = h_c[&base].mean;
    let h_cr = levels
        .iter()
        .filter(|&&l| l != base)
        .map(|&level| RatioEntry {
            level,
            base,
            ratio: contrastive_ratio(h_c[&level].mean, base_mean).ok(),
        })
        .collect();

    Ok(MetricsReport {
        label: model.label.clone(),
        unit: model.unit,
        perplexity,
        h_c,
        h_cr,
        base,
        runs: plan.runs,
    })
}
