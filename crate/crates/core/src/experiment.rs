//! Experiment orchestration behind the `cent` command line tool.
//!
//! A run lives in one output directory:
//!
//! ```text
//! vocab.txt  train.txt  valid.txt  test.txt  stats.tsv  manifest.json
//! models/<name>.cent    logs/<name>.epochs.tsv
//! report.tsv  curve_distortion.csv  curve_epochs.csv  results.json
//! ```
//!
//! Every command is a deterministic function of its configuration, so rerunning
//! it reproduces its outputs byte for byte. Each output carries the toolkit
//! version and a hash of the effective configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container::{Container, ModelKind};
use crate::corpus::{parse_corpus, Corpus, EosConvention, Sentence, SplitRole, Vocabulary};
use crate::distortion::{distort_corpus, write_distorted, DistortionMeta, DistortionSpec};
use crate::error::{Error, Result};
use crate::metrics::{averaged_evaluation, EvaluationPlan, LanguageModel, Level, MetricsReport, ScoredModel, Unit};
use crate::neural::SgdConfig;
use crate::ngram::{train_kn, NGramModel};
use crate::rnn::{rnn_train, RnnConfig, RnnModel};
use crate::seeding::derive_seed;
use crate::srnn::{srnn_train, SrnnConfig, SrnnModel};

pub const OUTPUT_DIR_ENV: &str = "CENT_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "cent-out";

const RNN_SEED_TAG: u64 = 1;
const SRNN_SEED_TAG: u64 = 2;
const SRNN_NEGATIVES_TAG: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RnnSettings {
    pub hidden: usize,
    pub classes: usize,
    pub bptt: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for RnnSettings {
    fn default() -> Self {
        let d = RnnConfig::default();
        RnnSettings {
            hidden: d.hidden,
            classes: d.classes,
            bptt: d.bptt,
            epochs: d.sgd.max_epochs,
            learning_rate: d.sgd.learning_rate,
            l2: d.sgd.l2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SrnnSettings {
    pub latent: usize,
    /// Distortion level of the training negatives.
    pub train_level: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for SrnnSettings {
    fn default() -> Self {
        let d = SrnnConfig::default();
        SrnnSettings {
            latent: d.latent,
            train_level: d.distortion.level(),
            epochs: d.sgd.max_epochs,
            learning_rate: d.sgd.learning_rate,
            l2: d.sgd.l2,
        }
    }
}

/// Everything that determines the outputs of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub vocab_size: usize,
    pub levels: Vec<f64>,
    pub base_level: f64,
    /// Share of distorted positions that are substitutions; the rest are transpositions.
    pub sub_trans_split: f64,
    /// Number of independently distorted test copies averaged per level.
    pub seeds: usize,
    /// Master seed; model initialization and every channel derive from it.
    pub seed: u64,
    /// Report entropies in bits instead of nats.
    pub bits: bool,
    /// Relative tolerance under which two ratios count as similar.
    pub similarity: f64,
    pub rnn: RnnSettings,
    pub srnn: SrnnSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let plan = EvaluationPlan::default();
        ExperimentConfig {
            train: None,
            valid: None,
            test: None,
            vocab_size: 10_000,
            levels: plan.levels,
            base_level: plan.base,
            sub_trans_split: plan.sub_share,
            seeds: plan.runs,
            seed: plan.seed,
            bits: false,
            similarity: crate::metrics::DEFAULT_SIMILARITY,
            rnn: RnnSettings::default(),
            srnn: SrnnSettings::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads a TOML file; absent keys keep their defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config file: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.plan().validate()?;
        if !(0.0..=1.0).contains(&self.sub_trans_split) {
            return Err(Error::InvalidArgument(format!(
                "substitution share must lie in [0, 1], got {}",
                self.sub_trans_split
            )));
        }
        if self.vocab_size == 0 {
            return Err(Error::InvalidArgument("vocabulary size must be positive".into()));
        }
        if self.similarity.is_nan() || self.similarity < 0.0 {
            return Err(Error::InvalidArgument("similarity tolerance must be non-negative".into()));
        }
        Ok(())
    }

    /// Short SHA-256 of the canonical JSON form of this configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            toolkit_version: crate::VERSION.to_owned(),
            config_hash: self.hash(),
        }
    }

    pub fn plan(&self) -> EvaluationPlan {
        EvaluationPlan {
            levels: self.levels.clone(),
            base: self.base_level,
            runs: self.seeds,
            seed: self.seed,
            sub_share: self.sub_trans_split,
            eos: EosConvention::CountEos,
        }
    }

    pub fn rnn_config(&self) -> RnnConfig {
        let r = &self.rnn;
        let d = RnnConfig::default();
        RnnConfig {
            hidden: r.hidden,
            classes: r.classes,
            bptt: r.bptt,
            sgd: SgdConfig {
                learning_rate: r.learning_rate,
                l2: r.l2,
                max_epochs: r.epochs,
                seed: derive_seed(self.seed, RNN_SEED_TAG),
                ..d.sgd
            },
            ..d
        }
    }

    pub fn srnn_config(&self) -> Result<SrnnConfig> {
        let s = &self.srnn;
        let d = SrnnConfig::default();
        Ok(SrnnConfig {
            latent: s.latent,
            distortion: DistortionSpec::from_level(
                s.train_level,
                self.sub_trans_split,
                derive_seed(self.seed, SRNN_NEGATIVES_TAG),
            )?,
            sgd: SgdConfig {
                learning_rate: s.learning_rate,
                l2: s.l2,
                max_epochs: s.epochs,
                seed: derive_seed(self.seed, SRNN_SEED_TAG),
                ..d.sgd
            },
            ..d
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub toolkit_version: String,
    pub config_hash: String,
}

impl Provenance {
    /// Header lines for text outputs.
    pub fn comment(&self) -> String {
        format!("# cent {}\n# config {}\n", self.toolkit_version, self.config_hash)
    }
}

/// Paths inside an output directory.
#[derive(Clone, Debug)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.txt")
    }

    pub fn split(&self, role: SplitRole) -> PathBuf {
        let name = match role {
            SplitRole::Train => "train.txt",
            SplitRole::Valid => "valid.txt",
            SplitRole::Test => "test.txt",
        };
        self.root.join(name)
    }

    pub fn stats(&self) -> PathBuf {
        self.root.join("stats.tsv")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn model(&self, name: &str) -> PathBuf {
        self.root.join("models").join(format!("{name}.cent"))
    }

    pub fn epoch_log(&self, name: &str) -> PathBuf {
        self.root.join("logs").join(format!("{name}.epochs.tsv"))
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.tsv")
    }

    pub fn distortion_curve(&self) -> PathBuf {
        self.root.join("curve_distortion.csv")
    }

    pub fn epoch_curve(&self) -> PathBuf {
        self.root.join("curve_epochs.csv")
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results.json")
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::InvalidArgument(format!("no {what} corpus given")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: String,
    pub sentences: usize,
    pub words: usize,
    pub tokens_with_eos: usize,
    pub oov_tokens: usize,
    pub skipped_lines: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub vocab_size: usize,
    pub splits: Vec<SplitStats>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    provenance: Provenance,
    config: &'a ExperimentConfig,
    summary: &'a PrepareSummary,
    /// SHA-256 of every file written by `prepare`.
    outputs: Vec<(String, String)>,
}

/// Builds the vocabulary from the training text and re-encodes all three splits.
pub fn prepare(cfg: &ExperimentConfig, ws: &Workspace) -> Result<PrepareSummary> {
    cfg.validate()?;
    let sources = [
        (SplitRole::Train, require(&cfg.train, "training")?),
        (SplitRole::Valid, require(&cfg.valid, "validation")?),
        (SplitRole::Test, require(&cfg.test, "test")?),
    ];
    let texts = sources
        .iter()
        .map(|(_, p)| read_text(p))
        .collect::<Result<Vec<_>>>()?;
    let vocab = Vocabulary::build(&texts[0], cfg.vocab_size)?;

    let mut outputs = vec![(ws.vocab(), vocab.to_text())];
    let mut splits = Vec::new();
    for ((role, path), text) in sources.iter().zip(&texts) {
        let (corpus, stats) = parse_corpus(text, &vocab, *role).map_err(|e| match e {
            Error::EmptyInput(_) => Error::EmptyInput(format!("{} has no sentences", path.display())),
            other => other,
        })?;
        splits.push(SplitStats {
            split: role_name(*role).to_owned(),
            sentences: corpus.len(),
            words: corpus.word_count(),
            tokens_with_eos: corpus.unit_count(EosConvention::CountEos),
            oov_tokens: stats.oov_tokens,
            skipped_lines: stats.skipped_lines,
        });
        outputs.push((ws.split(*role), corpus.to_text(&vocab)));
    }
    let summary = PrepareSummary {
        vocab_size: vocab.size(),
        splits,
    };

    let provenance = cfg.provenance();
    let mut stats = provenance.comment();
    stats.push_str("split\tsentences\twords\ttokens_with_eos\toov_tokens\tskipped_lines\n");
    for s in &summary.splits {
        writeln!(
            stats,
            "{}\t{}\t{}\t{}\t{}\t{}",
            s.split, s.sentences, s.words, s.tokens_with_eos, s.oov_tokens, s.skipped_lines
        )
        .expect("writing to a String cannot fail");
    }
    outputs.push((ws.stats(), stats));

    let mut hashes = Vec::new();
    for (path, text) in &outputs {
        write_file(path, text)?;
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        hashes.push((name, hex::encode(Sha256::digest(text.as_bytes()))));
    }
    let manifest = Manifest {
        provenance,
        config: cfg,
        summary: &summary,
        outputs: hashes,
    };
    write_file(&ws.manifest(), to_json(&manifest))?;
    Ok(summary)
}

fn role_name(role: SplitRole) -> &'static str {
    match role {
        SplitRole::Train => "train",
        SplitRole::Valid => "valid",
        SplitRole::Test => "test",
    }
}

/// Vocabulary and corpora written by [`prepare`].
#[derive(Clone, Debug)]
pub struct Prepared {
    pub vocab: Vocabulary,
    pub train: Corpus,
    pub valid: Corpus,
    pub test: Corpus,
}

pub fn load_prepared(ws: &Workspace) -> Result<Prepared> {
    let vocab = Vocabulary::load(&ws.vocab())?;
    let load = |role| crate::corpus::load_corpus(&ws.split(role), &vocab, role);
    Ok(Prepared {
        train: load(SplitRole::Train)?,
        valid: load(SplitRole::Valid)?,
        test: load(SplitRole::Test)?,
        vocab: vocab.clone(),
    })
}

/// Distorts a text file at `level` with the configured split and seed.
pub fn distort_file(
    cfg: &ExperimentConfig,
    vocab: &Vocabulary,
    input: &Path,
    output: &Path,
    level: f64,
) -> Result<DistortionMeta> {
    cfg.validate()?;
    let (corpus, _) = parse_corpus(&read_text(input)?, vocab, SplitRole::Test)?;
    let spec = DistortionSpec::from_level(level, cfg.sub_trans_split, cfg.seed)?;
    let pairs = distort_corpus(&corpus, &spec, vocab);
    let mut meta = DistortionMeta::summarize(&spec, &pairs);
    meta.config_hash = Some(cfg.hash());
    if let Some(dir) = output.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_distorted(output, &pairs, vocab, &meta)?;
    Ok(meta)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Kn3,
    Kn5,
    Rnn,
    Srnn,
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kn3" => Ok(ModelFamily::Kn3),
            "kn5" => Ok(ModelFamily::Kn5),
            "rnn" => Ok(ModelFamily::Rnn),
            "srnn" => Ok(ModelFamily::Srnn),
            other => Err(Error::InvalidArgument(format!(
                "unknown model family `{other}` (expected kn3, kn5, rnn or srnn)"
            ))),
        }
    }
}

/// Any model the toolkit can train, loaded from its container.
#[derive(Clone, Debug)]
pub enum AnyModel {
    Kn(NGramModel),
    Rnn(RnnModel),
    Srnn(SrnnModel),
}

impl AnyModel {
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        Ok(match c.kind {
            ModelKind::Kn => AnyModel::Kn(NGramModel::from_container(c)?),
            ModelKind::Rnn => AnyModel::Rnn(RnnModel::from_container(c)?),
            ModelKind::Srnn => AnyModel::Srnn(SrnnModel::from_container(c)?),
        })
    }

    pub fn to_container(&self) -> Container {
        match self {
            AnyModel::Kn(m) => m.to_container(),
            AnyModel::Rnn(m) => m.to_container(),
            AnyModel::Srnn(m) => m.to_container(),
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        match self {
            AnyModel::Kn(m) => m.vocab(),
            AnyModel::Rnn(m) => m.vocab(),
            AnyModel::Srnn(m) => m.vocab(),
        }
    }

    fn inner(&self) -> &dyn LanguageModel {
        match self {
            AnyModel::Kn(m) => m,
            AnyModel::Rnn(m) => m,
            AnyModel::Srnn(m) => m,
        }
    }

    /// Per-epoch training statistics, empty for count-based models.
    pub fn epoch_points(&self) -> Vec<EpochPoint> {
        let point = |epoch, metric: &str, value| EpochPoint {
            epoch,
            metric: metric.to_owned(),
            value,
        };
        match self {
            AnyModel::Kn(_) => Vec::new(),
            AnyModel::Rnn(m) => m
                .epochs()
                .iter()
                .flat_map(|e| {
                    [
                        point(e.epoch, "train_entropy", e.train_entropy),
                        point(e.epoch, "valid_entropy", e.valid_entropy),
                    ]
                })
                .collect(),
            AnyModel::Srnn(m) => m
                .epochs()
                .iter()
                .flat_map(|e| {
                    [
                        point(e.epoch, "train_h_c", e.train_contrastive_entropy),
                        point(e.epoch, "train_h_c_end_of_epoch", e.snapshot_contrastive_entropy),
                        point(e.epoch, "mean_hinge", e.mean_loss),
                    ]
                })
                .collect(),
        }
    }
}

impl LanguageModel for AnyModel {
    fn log_score(&self, sentence: &Sentence) -> f64 {
        self.inner().log_score(sentence)
    }

    fn unit(&self) -> Unit {
        self.inner().unit()
    }

    fn is_normalized(&self) -> bool {
        self.inner().is_normalized()
    }

    fn label(&self) -> String {
        self.inner().label()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub label: String,
    pub model_path: PathBuf,
    pub log_path: Option<PathBuf>,
}

/// File stem for a trained model, e.g. `kn3`, `rnn`, `srnn-75-10`.
pub fn model_name(cfg: &ExperimentConfig, family: ModelFamily) -> String {
    match family {
        ModelFamily::Kn3 => "kn3".into(),
        ModelFamily::Kn5 => "kn5".into(),
        ModelFamily::Rnn => "rnn".into(),
        ModelFamily::Srnn => format!(
            "srnn-{}-{}",
            cfg.srnn.latent,
            (cfg.srnn.train_level * 100.0).round() as u32
        ),
    }
}

/// Trains one model on the prepared corpora and saves it under `models/`.
pub fn train(cfg: &ExperimentConfig, ws: &Workspace, family: ModelFamily) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = load_prepared(ws)?;
    let model = match family {
        ModelFamily::Kn3 => AnyModel::Kn(train_kn(&data.train, &data.vocab, 3)?),
        ModelFamily::Kn5 => AnyModel::Kn(train_kn(&data.train, &data.vocab, 5)?),
        ModelFamily::Rnn => AnyModel::Rnn(rnn_train(&data.train, &data.valid, &data.vocab, &cfg.rnn_config())?),
        ModelFamily::Srnn => AnyModel::Srnn(srnn_train(&data.train, &data.vocab, &cfg.srnn_config()?)?),
    };
    let name = model_name(cfg, family);
    let provenance = cfg.provenance();

    let mut container = model.to_container();
    if let serde_json::Value::Object(map) = &mut container.metadata {
        map.insert(
            "provenance".into(),
            serde_json::to_value(&provenance).expect("provenance serializes"),
        );
    }
    let model_path = ws.model(&name);
    write_file(&model_path, container.to_bytes())?;

    let points = model.epoch_points();
    let log_path = if points.is_empty() {
        None
    } else {
        let path = ws.epoch_log(&name);
        let mut log = provenance.comment();
        log.push_str("epoch\tmetric\tvalue\n");
        for p in &points {
            writeln!(log, "{}\t{}\t{}", p.epoch, p.metric, p.value).expect("writing to a String cannot fail");
        }
        write_file(&path, log)?;
        Some(path)
    };
    Ok(TrainOutcome {
        label: model.label(),
        model_path,
        log_path,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochPoint {
    pub epoch: usize,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochCurve {
    pub label: String,
    pub points: Vec<EpochPoint>,
}

/// Everything `evaluate` computed; entropies are stored in nats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub provenance: Provenance,
    pub plan: EvaluationPlan,
    pub reports: Vec<MetricsReport>,
    pub curves: Vec<EpochCurve>,
}

impl ResultsFile {
    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_str(&read_text(path)?).map_err(|e| Error::format("results file", e.to_string()))
    }

    pub fn report(&self, label: &str) -> Option<&MetricsReport> {
        self.reports.iter().find(|r| r.label == label)
    }
}

/// Evaluates every model on the test text (the prepared test split unless
/// `test` is given) and writes the report files.
pub fn evaluate(cfg: &ExperimentConfig, ws: &Workspace, models: &[PathBuf], test: Option<&Path>) -> Result<ResultsFile> {
    cfg.validate()?;
    if models.is_empty() {
        return Err(Error::InvalidArgument("no models to evaluate".into()));
    }
    let test_path = test.map(Path::to_path_buf).unwrap_or_else(|| ws.split(SplitRole::Test));
    let test_text = read_text(&test_path)?;
    let plan = cfg.plan();

    let mut reports = Vec::new();
    let mut curves = Vec::new();
    let mut first_vocab: Option<Vocabulary> = None;
    for path in models {
        let model = AnyModel::load(path)?;
        match &first_vocab {
            Some(v) if v != model.vocab() => log::warn!(
                "{} uses a different vocabulary; its distorted test sets differ from the other models'",
                path.display()
            ),
            Some(_) => {}
            None => first_vocab = Some(model.vocab().clone()),
        }
        let (corpus, _) = parse_corpus(&test_text, model.vocab(), SplitRole::Test)?;
        let scored = ScoredModel::from_model(&model);
        log::info!("evaluating {} ({} runs per level)", scored.label, plan.runs);
        reports.push(averaged_evaluation(&scored, &corpus, model.vocab(), &plan)?);
        let points = model.epoch_points();
        if !points.is_empty() {
            curves.push(EpochCurve {
                label: model.label(),
                points,
            });
        }
    }

    let results = ResultsFile {
        provenance: cfg.provenance(),
        plan,
        reports,
        curves,
    };
    write_file(&ws.results(), to_json(&results))?;
    write_file(&ws.report(), render_report(&results, cfg.bits, None)?)?;
    write_file(&ws.distortion_curve(), render_distortion_curve(&results, cfg.bits))?;
    write_file(&ws.epoch_curve(), render_epoch_curve(&results, cfg.bits))?;
    Ok(results)
}

fn entropy_scale(bits: bool) -> f64 {
    if bits {
        std::f64::consts::LN_2.recip()
    } else {
        1.0
    }
}

fn unit_name(bits: bool) -> &'static str {
    if bits {
        "bits"
    } else {
        "nats"
    }
}

fn levels_of(results: &ResultsFile) -> Result<(Vec<Level>, Level)> {
    results.plan.validate()
}

/// Verdict columns: compare every row with the `reference` model.
#[derive(Clone, Debug, PartialEq)]
pub struct VerdictOptions {
    pub reference: String,
    pub similarity: f64,
}

/// One row per model: perplexity, mean and spread of `H_C` per level, and the
/// ratios against the base level, optionally followed by verdict columns.
pub fn render_report(results: &ResultsFile, bits: bool, verdicts: Option<&VerdictOptions>) -> Result<String> {
    let (levels, base) = levels_of(results)?;
    let others: Vec<Level> = levels.iter().copied().filter(|&l| l != base).collect();
    let reference = match verdicts {
        Some(v) => Some(
            results
                .report(&v.reference)
                .ok_or_else(|| Error::InvalidArgument(format!("no model labelled `{}` in the results", v.reference)))?,
        ),
        None => None,
    };
    let scale = entropy_scale(bits);

    let mut out = results.provenance.comment();
    writeln!(
        out,
        "# entropies in {}, {} runs per level, seed {}",
        unit_name(bits),
        results.plan.runs,
        results.plan.seed
    )
    .expect("writing to a String cannot fail");
    let mut header = vec!["model".to_owned(), "ppl".to_owned()];
    header.extend(levels.iter().map(|l| format!("H_C@{l}")));
    header.extend(levels.iter().map(|l| format!("sd@{l}")));
    header.extend(others.iter().map(|l| format!("H_CR@{l}/{base}")));
    if let Some(r) = reference {
        header.extend(others.iter().map(|l| format!("verdict@{l} vs {}", r.label)));
    }
    out.push_str(&header.join("\t"));
    out.push('\n');

    for report in &results.reports {
        let mut row = vec![
            report.label.clone(),
            report.perplexity.map_or_else(|| "-".to_owned(), |p| format!("{p:.2}")),
        ];
        for l in &levels {
            row.push(report.h_c.get(l).map_or("-".into(), |s| format!("{:.4}", s.mean * scale)));
        }
        for l in &levels {
            row.push(report.h_c.get(l).map_or("-".into(), |s| format!("{:.4}", s.std_dev * scale)));
        }
        for &l in &others {
            row.push(report.ratio(l).map_or("-".into(), |r| format!("{r:.4}")));
        }
        if let (Some(r), Some(v)) = (reference, verdicts) {
            for &l in &others {
                let cell = if r.label == report.label {
                    "reference".to_owned()
                } else {
                    report
                        .verdict_against(r, l, v.similarity)
                        .map_or("-".into(), |v| v.to_string())
                };
                row.push(cell);
            }
        }
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    Ok(out)
}

/// `model,level,h_c,sd` rows for plotting entropy against distortion level.
pub fn render_distortion_curve(results: &ResultsFile, bits: bool) -> String {
    let scale = entropy_scale(bits);
    let mut out = results.provenance.comment();
    writeln!(out, "# entropies in {}", unit_name(bits)).expect("writing to a String cannot fail");
    out.push_str("model,level,h_c,sd\n");
    for r in &results.reports {
        for (level, s) in &r.h_c {
            writeln!(
                out,
                "{},{},{},{}",
                r.label,
                level.fraction(),
                s.mean * scale,
                s.std_dev * scale
            )
            .expect("writing to a String cannot fail");
        }
    }
    out
}

/// `model,epoch,metric,value` rows for plotting training progress.
pub fn render_epoch_curve(results: &ResultsFile, bits: bool) -> String {
    let scale = entropy_scale(bits);
    let mut out = results.provenance.comment();
    writeln!(out, "# entropies in {}", unit_name(bits)).expect("writing to a String cannot fail");
    out.push_str("model,epoch,metric,value\n");
    for c in &results.curves {
        for p in &c.points {
            writeln!(out, "{},{},{},{}", c.label, p.epoch, p.metric, p.value * scale)
                .expect("writing to a String cannot fail");
        }
    }
    out
}
