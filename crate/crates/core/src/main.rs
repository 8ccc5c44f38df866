use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use contrastive_entropy::corpus::Vocabulary;
use contrastive_entropy::experiment::{
    self, ExperimentConfig, ModelFamily, ResultsFile, VerdictOptions, Workspace, DEFAULT_OUTPUT_DIR, OUTPUT_DIR_ENV,
};
use contrastive_entropy::{Error, Result};

/// Contrastive entropy evaluation for word- and sentence-level language models.
///
/// A typical run: `prepare` the corpora, `train` a few models, `evaluate` them
/// and read `report.tsv`. Settings come from built-in defaults, then the
/// `--config` file, then command line flags.
#[derive(Debug, Parser)]
#[command(name = "cent", version)]
struct Cli {
    /// TOML file with experiment settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, env = OUTPUT_DIR_ENV, default_value = DEFAULT_OUTPUT_DIR)]
    out: PathBuf,

    /// Worker threads for scoring and distortion (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(flatten)]
    common: CommonFlags,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CommonFlags {
    /// Master seed for model initialization and distortion channels.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Number of distorted test copies averaged per level.
    #[arg(long, global = true)]
    seeds: Option<usize>,

    /// Report entropies in bits instead of nats.
    #[arg(long, global = true)]
    bits: bool,

    /// Distortion levels as fractions, comma separated (e.g. 0.1,0.3,0.5).
    #[arg(long, global = true, value_delimiter = ',')]
    levels: Option<Vec<f64>>,

    /// Level that ratios are taken against; must be one of --levels.
    #[arg(long, global = true)]
    base_level: Option<f64>,

    /// Share of distorted positions that are substitutions (rest: transpositions).
    #[arg(long, global = true)]
    sub_trans_split: Option<f64>,

    /// Relative tolerance under which two ratios count as similar.
    #[arg(long, global = true)]
    similarity: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the vocabulary and re-encode the train, validation and test corpora.
    Prepare {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Maximum number of word types, not counting the sentence markers.
        #[arg(long)]
        vocab_size: Option<usize>,
    },
    /// Write a distorted copy of a corpus plus a `.meta.json` summary.
    Distort {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Fraction of positions to distort.
        #[arg(long)]
        level: f64,
        /// Vocabulary file (default: the prepared one in the output directory).
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Train a model on the prepared corpora: kn3, kn5, rnn or srnn.
    Train {
        family: ModelFamily,
        #[command(flatten)]
        hyper: TrainFlags,
    },
    /// Score models on distorted test sets and write the report files.
    Evaluate {
        /// Model files produced by `train`.
        #[arg(required = true)]
        models: Vec<PathBuf>,
        /// Test text (default: the prepared test split).
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Re-render a results file, optionally with verdicts against a reference model.
    Report {
        /// Results file (default: results.json in the output directory).
        #[arg(long)]
        results: Option<PathBuf>,
        /// Label of the reference model, e.g. "3-gram KN".
        #[arg(long)]
        reference: Option<String>,
        /// Also write the table to this file.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct TrainFlags {
    /// Hidden units (rnn).
    #[arg(long)]
    hidden: Option<usize>,
    /// Output classes (rnn).
    #[arg(long)]
    classes: Option<usize>,
    /// Truncation depth of backpropagation through time (rnn).
    #[arg(long)]
    bptt: Option<usize>,
    /// Latent size (srnn).
    #[arg(long)]
    latent: Option<usize>,
    /// Distortion level of the training negatives (srnn).
    #[arg(long)]
    train_level: Option<f64>,
    /// Maximum number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// L2 regularization coefficient.
    #[arg(long)]
    l2: Option<f64>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn effective_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let c = &cli.common;
    set(&mut cfg.seed, c.seed);
    set(&mut cfg.seeds, c.seeds);
    set(&mut cfg.levels, c.levels.clone());
    set(&mut cfg.base_level, c.base_level);
    set(&mut cfg.sub_trans_split, c.sub_trans_split);
    set(&mut cfg.similarity, c.similarity);
    cfg.bits |= c.bits;

    match &cli.command {
        Command::Prepare {
            train,
            valid,
            test,
            vocab_size,
        } => {
            set(&mut cfg.train, train.clone().map(Some));
            set(&mut cfg.valid, valid.clone().map(Some));
            set(&mut cfg.test, test.clone().map(Some));
            set(&mut cfg.vocab_size, *vocab_size);
        }
        Command::Train { family, hyper } => match family {
            ModelFamily::Rnn => {
                let r = &mut cfg.rnn;
                set(&mut r.hidden, hyper.hidden);
                set(&mut r.classes, hyper.classes);
                set(&mut r.bptt, hyper.bptt);
                set(&mut r.epochs, hyper.epochs);
                set(&mut r.learning_rate, hyper.lr);
                set(&mut r.l2, hyper.l2);
            }
            ModelFamily::Srnn => {
                let s = &mut cfg.srnn;
                set(&mut s.latent, hyper.latent);
                set(&mut s.train_level, hyper.train_level);
                set(&mut s.epochs, hyper.epochs);
                set(&mut s.learning_rate, hyper.lr);
                set(&mut s.l2, hyper.l2);
            }
            ModelFamily::Kn3 | ModelFamily::Kn5 => {}
        },
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    let cfg = effective_config(&cli)?;
    let ws = Workspace::new(&cli.out);
    log::debug!("config {}: {cfg:?}", cfg.hash());

    match &cli.command {
        Command::Prepare { .. } => {
            let summary = experiment::prepare(&cfg, &ws)?;
            println!("vocabulary: {} types", summary.vocab_size);
            for s in &summary.splits {
                println!(
                    "{}: {} sentences, {} words, {} tokens with </s>, {} out of vocabulary",
                    s.split, s.sentences, s.words, s.tokens_with_eos, s.oov_tokens
                );
            }
        }
        Command::Distort {
            input,
            output,
            level,
            vocab,
        } => {
            let vocab = Vocabulary::load(vocab.as_deref().unwrap_or(&ws.vocab()))?;
            let meta = experiment::distort_file(&cfg, &vocab, input, output, *level)?;
            println!(
                "{}: {} positions, {} substitutions, {} transpositions",
                output.display(),
                meta.positions,
                meta.substitutions,
                meta.transpositions
            );
        }
        Command::Train { family, .. } => {
            let outcome = experiment::train(&cfg, &ws, *family)?;
            println!("{} -> {}", outcome.label, outcome.model_path.display());
            if let Some(log) = outcome.log_path {
                println!("epoch log -> {}", log.display());
            }
        }
        Command::Evaluate { models, test } => {
            let results = experiment::evaluate(&cfg, &ws, models, test.as_deref())?;
            print!("{}", experiment::render_report(&results, cfg.bits, None)?);
        }
        Command::Report {
            results,
            reference,
            output,
        } => {
            let results = ResultsFile::load(results.as_deref().unwrap_or(&ws.results()))?;
            let reference = reference
                .clone()
                .or_else(|| results.reports.first().map(|r| r.label.clone()));
            let verdicts = reference.map(|reference| VerdictOptions {
                reference,
                similarity: cfg.similarity,
            });
            let table = experiment::render_report(&results, cfg.bits, verdicts.as_ref())?;
            if let Some(path) = output {
                std::fs::write(path, &table).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
            }
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
