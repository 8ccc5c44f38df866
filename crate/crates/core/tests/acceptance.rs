//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion, then
//! fails if any criterion that could be evaluated did not hold.
//!
//! Criteria 1 and the full-size half of 2 need the Penn Treebank in the
//! Mikolov layout (`ptb.train.txt`, `ptb.valid.txt`, `ptb.test.txt`) under
//! `$PTB_DIR`; the full 200-unit RNN additionally needs `CENT_FULL_RNN=1`.
//! Without the data those lines read FAIL with the reason.

mod support;

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use contrastive_entropy::corpus::{parse_corpus, Corpus, EosConvention, SplitRole, Vocabulary};
use contrastive_entropy::distortion::{distort_corpus, DistortionSpec};
use contrastive_entropy::experiment::ExperimentConfig;
use contrastive_entropy::metrics::{averaged_evaluation, perplexity, EvaluationPlan, Level, MetricsReport, ScoredModel};
use contrastive_entropy::neural::{softmax_forward, GradientCheck};
use contrastive_entropy::ngram::{train_kn, DiscountMode};
use contrastive_entropy::rnn::{rnn_train, ClassMap, RnnConfig, RnnModel};
use contrastive_entropy::seeding::substream;
use contrastive_entropy::srnn::{srnn_train, SrnnModel};
use contrastive_entropy::synthetic::{generate_splits, SyntheticSpec};
use rand::Rng;

enum Outcome {
    Pass,
    Fail,
    /// Could not be evaluated here; reported as FAIL but not asserted.
    Unavailable,
}

struct Line {
    id: &'static str,
    name: &'static str,
    outcome: Outcome,
    detail: String,
}

impl Line {
    fn checked(id: &'static str, name: &'static str, ok: bool, detail: String) -> Self {
        let outcome = if ok { Outcome::Pass } else { Outcome::Fail };
        Line { id, name, outcome, detail }
    }
}

struct Data {
    vocab: Vocabulary,
    train: Corpus,
    valid: Corpus,
    test: Corpus,
}

fn load(train: &str, valid: &str, test: &str) -> Data {
    let vocab = Vocabulary::build(train, 10_000).unwrap();
    let parse = |t: &str, role| parse_corpus(t, &vocab, role).unwrap().0;
    Data {
        train: parse(train, SplitRole::Train),
        valid: parse(valid, SplitRole::Valid),
        test: parse(test, SplitRole::Test),
        vocab,
    }
}

fn synthetic() -> Data {
    let s = generate_splits(&SyntheticSpec::default(), 1500, 300, 300);
    load(&s.train, &s.valid, &s.test)
}

fn ptb() -> Option<(PathBuf, [String; 3])> {
    let dir = PathBuf::from(std::env::var_os("PTB_DIR")?);
    let read = |n: &str| std::fs::read_to_string(dir.join(format!("ptb.{n}.txt"))).ok();
    Some((dir.clone(), [read("train")?, read("valid")?, read("test")?]))
}

fn lvl(d: f64) -> Level {
    Level::from_fraction(d).unwrap()
}

fn levels() -> [Level; 3] {
    [lvl(0.1), lvl(0.3), lvl(0.5)]
}

fn fmt_means(r: &MetricsReport) -> String {
    levels()
        .iter()
        .map(|&l| format!("{:.3}", r.mean_h_c(l).unwrap()))
        .collect::<Vec<_>>()
        .join("/")
}

fn ppl(m: &ScoredModel<'_>, test: &Corpus) -> f64 {
    perplexity(m, test, EosConvention::CountEos).unwrap()
}

fn rnn_config(cfg: &ExperimentConfig, hidden: usize, classes: usize) -> RnnConfig {
    let mut cfg = cfg.clone();
    cfg.rnn.hidden = hidden;
    cfg.rnn.classes = classes;
    cfg.rnn_config()
}

fn criterion_1(lines: &mut Vec<Line>) {
    const NAME: &str = "3-gram KN perplexity on PTB in [140, 160], 5-gram no worse";
    let Some((dir, [train, valid, test])) = ptb() else {
        lines.push(Line {
            id: "1",
            name: NAME,
            outcome: Outcome::Unavailable,
            detail: "not run: PTB_DIR is not set or lacks ptb.{train,valid,test}.txt".into(),
        });
        return;
    };
    let d = load(&train, &valid, &test);
    let kn3 = train_kn(&d.train, &d.vocab, 3).unwrap();
    let kn5 = train_kn(&d.train, &d.vocab, 5).unwrap();
    let (p3, p5) = (ppl(&ScoredModel::from_model(&kn3), &d.test), ppl(&ScoredModel::from_model(&kn5), &d.test));
    lines.push(Line::checked(
        "1",
        NAME,
        (140.0..=160.0).contains(&p3) && p5 <= p3,
        format!("{}: 3-gram {p3:.2}, 5-gram {p5:.2}", dir.display()),
    ));
}

fn criterion_2_full(lines: &mut Vec<Line>, cfg: &ExperimentConfig) {
    const NAME: &str = "RNN (200 hidden, 50 classes) PTB perplexity in [130, 160]";
    let data = ptb().filter(|_| std::env::var_os("CENT_FULL_RNN").is_some());
    let Some((_, [train, valid, test])) = data else {
        lines.push(Line {
            id: "2",
            name: NAME,
            outcome: Outcome::Unavailable,
            detail: "not run: needs PTB_DIR and CENT_FULL_RNN=1 (hours of training)".into(),
        });
        return;
    };
    let d = load(&train, &valid, &test);
    let rnn = rnn_train(&d.train, &d.valid, &d.vocab, &rnn_config(cfg, 200, 50)).unwrap();
    let p = ppl(&ScoredModel::from_model(&rnn), &d.test);
    lines.push(Line::checked("2", NAME, (130.0..=160.0).contains(&p), format!("perplexity {p:.2}")));
}

fn criterion_2_reduced(lines: &mut Vec<Line>, cfg: &ExperimentConfig, rnn_ppl: f64, kn5_ppl: f64) {
    const NAME: &str = "reduced RNN (50 hidden) beats the 5-gram on the same data";
    let (source, rnn, kn5) = match ptb() {
        Some((_, [train, valid, test])) => {
            let lines: Vec<&str> = train.lines().collect();
            let tenth = lines[..lines.len() / 10].join("\n");
            let d = load(&tenth, &valid, &test);
            let rnn = rnn_train(&d.train, &d.valid, &d.vocab, &rnn_config(cfg, 50, 10)).unwrap();
            let kn5 = train_kn(&d.train, &d.vocab, 5).unwrap();
            let r = ppl(&ScoredModel::from_model(&rnn), &d.test);
            let k = ppl(&ScoredModel::from_model(&kn5), &d.test);
            ("10% of PTB train", r, k)
        }
        None => ("synthetic corpus, PTB unavailable", rnn_ppl, kn5_ppl),
    };
    lines.push(Line::checked(
        "2",
        NAME,
        rnn < kn5,
        format!("{source}: RNN {rnn:.2} vs 5-gram {kn5:.2}"),
    ));
}

fn criterion_9() -> Line {
    use support::kn::{compare, RICH, SMALL};
    use support::recurrent::*;

    let mut kn_err: f64 = 0.0;
    for order in 2..=5 {
        kn_err = kn_err.max(compare(SMALL, order, DiscountMode::Estimated));
        kn_err = kn_err.max(compare(RICH, order, DiscountMode::Estimated));
    }

    let mut rnn_err: f64 = 0.0;
    for (seed, (bptt, classes)) in [(1, 3), (5, 3), (20, 4), (3, 1)].into_iter().enumerate() {
        rnn_err = rnn_err.max(rnn_gradient_error(bptt, classes, seed as u64 + 1));
    }

    let (v, train) = setup();
    let mut srnn_err: f64 = 0.0;
    let mut srnn_checked = 0;
    for (seed, (o, d)) in [
        ("the cat sat", "the mat sat"),
        ("a dog ran on the mat", "a dog on ran the mat"),
        ("the mat sat on a cat ran the", "the mat sat dog a cat ran the"),
    ]
    .into_iter()
    .enumerate()
    {
        for latent in [3, 6] {
            let (m, base) = srnn_with(&v, latent, 0.5, 50 + seed as u64 * 7 + latent as u64);
            let oracle = SrnnOracle { v: v.size(), l: latent };
            let p = pair(&v, o, d);
            let (_, grad) = m.hinge_gradient(&p);
            let r = GradientCheck::default().run(&base, &m.gradient_flat(&grad), |q| oracle.hinge(q, &p));
            srnn_err = srnn_err.max(r.max_rel_error);
            srnn_checked += r.checked;
        }
    }

    let mut norm_err: f64 = 0.0;
    let mut rng = substream(9, 9);
    for trial in 0..200u64 {
        let n = rng.random_range(1..60);
        let scale = [1.0, 30.0, 1e3][trial as usize % 3];
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
        norm_err = norm_err.max((softmax_forward(&x).iter().sum::<f64>() - 1.0).abs());
    }
    for classes in [1, 2, 5, 9] {
        let map = ClassMap::by_frequency(&train, &v, classes);
        let mut m = RnnModel::new(&v, map, 6, 3, classes as u64);
        let p: Vec<f64> = (0..m.num_params()).map(|_| rng.random_range(-4.0..4.0)).collect();
        m.set_params_flat(&p).unwrap();
        for _ in 0..25 {
            let h: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
            norm_err = norm_err.max((m.distribution(&h).iter().sum::<f64>() - 1.0).abs());
        }
    }

    Line::checked(
        "9",
        "oracle suites: KN to 1e-10, gradients to 1e-4, normalization to 1e-6",
        kn_err < 1e-10 && rnn_err < TOLERANCE && srnn_err < TOLERANCE && srnn_checked > 0 && norm_err < 1e-6,
        format!(
            "KN {kn_err:.1e}, RNN grad {rnn_err:.1e}, sRNN grad {srnn_err:.1e} over {srnn_checked} coords, normalization {norm_err:.1e}"
        ),
    )
}

fn criterion_10() -> Line {
    let d = synthetic();
    let mut sentences = Vec::new();
    let mut positions = 0;
    for s in d.train.sentences().iter().cycle() {
        if positions >= 100_000 {
            break;
        }
        positions += s.len();
        sentences.push(s.clone());
    }
    let corpus = Corpus::new(sentences, SplitRole::Test).unwrap();
    let spec = DistortionSpec::new(0.8, 0.1, 0.1, 2016).unwrap();
    let pairs = distort_corpus(&corpus, &spec, &d.vocab);
    let n = positions as f64;
    let subs: usize = pairs.iter().map(|p| p.substitutions).sum();
    let trans: usize = pairs.iter().map(|p| p.transpositions).sum();
    let sigma = (0.1 * 0.9 / n).sqrt();
    let (rs, rt) = (subs as f64 / n, trans as f64 / n);
    let lengths = pairs.iter().all(|p| p.original.len() == p.distorted.len());
    Line::checked(
        "10",
        "distortion rates within 3 sigma at (0.8, 0.1, 0.1), lengths preserved",
        (rs - 0.1).abs() <= 3.0 * sigma && (rt - 0.1).abs() <= 3.0 * sigma && lengths,
        format!(
            "{positions} positions: substitution {rs:.4} ({:+.2} sigma), transposition {rt:.4} ({:+.2} sigma), lengths preserved: {lengths}",
            (rs - 0.1) / sigma,
            (rt - 0.1) / sigma
        ),
    )
}

#[test]
fn acceptance() {
    let started = Instant::now();
    let cfg = ExperimentConfig::default();
    let plan = EvaluationPlan {
        runs: 10,
        ..cfg.plan()
    };
    let mut lines = Vec::new();

    criterion_1(&mut lines);
    criterion_2_full(&mut lines, &cfg);

    let d = synthetic();
    let kn3 = train_kn(&d.train, &d.vocab, 3).unwrap();
    let kn5 = train_kn(&d.train, &d.vocab, 5).unwrap();
    let rnn = rnn_train(&d.train, &d.valid, &d.vocab, &rnn_config(&cfg, 50, 10)).unwrap();
    let srnn = |level: f64| -> SrnnModel {
        let mut c = cfg.clone();
        c.srnn.latent = 75;
        c.srnn.train_level = level;
        srnn_train(&d.train, &d.vocab, &c.srnn_config().unwrap()).unwrap()
    };
    let (s10, s50) = (srnn(0.1), srnn(0.5));

    let models: Vec<ScoredModel<'_>> = vec![
        ScoredModel::from_model(&kn3),
        ScoredModel::from_model(&kn5),
        ScoredModel::from_model(&rnn),
        ScoredModel::from_model(&s10),
        ScoredModel::from_model(&s50),
    ];
    let reports: Vec<MetricsReport> = models
        .iter()
        .map(|m| averaged_evaluation(m, &d.test, &d.vocab, &plan).unwrap())
        .collect();
    let [r3, r5, rr, r10, r50] = [0, 1, 2, 3, 4].map(|i| &reports[i]);
    let word_level = [r3, r5, rr];

    criterion_2_reduced(&mut lines, &cfg, rr.perplexity.unwrap(), r5.perplexity.unwrap());

    let [l10, l30, l50] = levels();
    let increasing: Vec<String> = reports
        .iter()
        .filter(|r| !(r.mean_h_c(l10) < r.mean_h_c(l30) && r.mean_h_c(l30) < r.mean_h_c(l50)))
        .map(|r| r.label.clone())
        .collect();
    lines.push(Line::checked(
        "3",
        "mean H_C strictly increases over 10/30/50% for every model",
        increasing.is_empty(),
        reports
            .iter()
            .map(|r| format!("{} {}", r.label, fmt_means(r)))
            .collect::<Vec<_>>()
            .join("; "),
    ));

    let online: Vec<f64> = s10.epochs().iter().map(|e| e.train_contrastive_entropy).collect();
    let snapshot: Vec<f64> = s10.epochs().iter().map(|e| e.snapshot_contrastive_entropy).collect();
    let steps = online.len().saturating_sub(1);
    let rising = online.windows(2).filter(|w| w[1] >= w[0]).count();
    let show = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    lines.push(Line::checked(
        "4",
        "sRNN training H_C rises from first to last epoch, non-decreasing on >= 80% of steps",
        steps > 0 && online[steps] > online[0] && rising as f64 >= 0.8 * steps as f64,
        format!(
            "{}: {rising}/{steps} non-decreasing; epoch means [{}]; end-of-epoch snapshots [{}]",
            s10.label(),
            show(&online),
            show(&snapshot)
        ),
    ));

    let beats = levels()
        .iter()
        .all(|&l| rr.mean_h_c(l) > r5.mean_h_c(l) && rr.mean_h_c(l) > r3.mean_h_c(l));
    lines.push(Line::checked(
        "5",
        "RNN H_C above both n-gram models at every level",
        beats,
        format!("RNN {} vs 5-gram {} vs 3-gram {}", fmt_means(rr), fmt_means(r5), fmt_means(r3)),
    ));

    lines.push(Line::checked(
        "6",
        "sRNN-75(10) H_C above sRNN-75(50) at 30% and 50%",
        r10.mean_h_c(l30) > r50.mean_h_c(l30) && r10.mean_h_c(l50) > r50.mean_h_c(l50),
        format!("{} vs {}", fmt_means(r10), fmt_means(r50)),
    ));

    let ratio_wins = [l30, l50]
        .iter()
        .all(|&l| word_level.iter().all(|w| r10.ratio(l) > w.ratio(l)));
    let ratios = |r: &MetricsReport| format!("{:.3}/{:.3}", r.ratio(l30).unwrap(), r.ratio(l50).unwrap());
    lines.push(Line::checked(
        "7",
        "sRNN-75(10) H_CR(30/10) and H_CR(50/10) above every word-level model",
        ratio_wins,
        format!(
            "sRNN {} vs {}",
            ratios(r10),
            word_level
                .iter()
                .map(|r| format!("{} {}", r.label, ratios(r)))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    ));

    let k = 3.0;
    let mut worst_hc: f64 = 0.0;
    let mut worst_hcr: f64 = 0.0;
    for (m, base) in models.iter().zip(&reports) {
        let scaled = ScoredModel::new(format!("{} x3", m.label), m.unit, m.normalized, |s| k * m.score(s));
        let r = averaged_evaluation(&scaled, &d.test, &d.vocab, &plan).unwrap();
        for (l, s) in &r.h_c {
            let b = base.h_c[l].per_run.iter().zip(&s.per_run);
            for (x, y) in b {
                worst_hc = worst_hc.max(((y - k * x) / (k * x)).abs());
            }
            worst_hc = worst_hc.max(((s.mean - k * base.h_c[l].mean) / (k * base.h_c[l].mean)).abs());
        }
        for l in [l30, l50] {
            let (x, y) = (base.ratio(l).unwrap(), r.ratio(l).unwrap());
            worst_hcr = worst_hcr.max(((y - x) / x).abs());
        }
    }
    lines.push(Line::checked(
        "8",
        "scaling log-scores by 3 scales H_C by 3 and keeps H_CR (1e-12 relative)",
        worst_hc <= 1e-12 && worst_hcr <= 1e-12,
        format!("worst relative deviation: H_C {worst_hc:.1e}, H_CR {worst_hcr:.1e}"),
    ));

    lines.push(criterion_9());
    lines.push(criterion_10());

    // written to the handle directly so the summary shows even when libtest captures output
    let mut out = std::io::stdout().lock();
    let mut summary = format!(
        "\nacceptance corpus: synthetic, {} train / {} test words, vocabulary {}; {} runs per level\n",
        d.train.word_count(),
        d.test.word_count(),
        d.vocab.size(),
        plan.runs
    );
    for l in &lines {
        let tag = match l.outcome {
            Outcome::Pass => "PASS",
            Outcome::Fail | Outcome::Unavailable => "FAIL",
        };
        summary.push_str(&format!("{tag} criterion {}: {} | {}\n", l.id, l.name, l.detail));
    }
    summary.push_str(&format!("elapsed {:.1?}\n", started.elapsed()));
    out.write_all(summary.as_bytes()).unwrap();
    out.flush().unwrap();

    let failed: Vec<&str> = lines
        .iter()
        .filter(|l| matches!(l.outcome, Outcome::Fail))
        .map(|l| l.id)
        .collect();
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
