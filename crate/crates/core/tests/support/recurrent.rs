//! Independent forward passes of the recurrent models, written directly over
//! the flat parameter vector, for checking analytic gradients.

use contrastive_entropy::corpus::{parse_corpus, Corpus, Sentence, SplitRole, Vocabulary};
use contrastive_entropy::distortion::{DistortedPair, DistortionSpec};
use contrastive_entropy::neural::GradientCheck;
use contrastive_entropy::rnn::{ClassMap, RnnModel};
use contrastive_entropy::seeding::substream;
use contrastive_entropy::srnn::SrnnModel;
use rand::Rng;

pub const TOLERANCE: f64 = 1e-4;
pub const TEXT: &str = "the cat sat on a mat\nthe dog ran\na cat ran on the mat\nthe dog sat\n";

pub fn setup() -> (Vocabulary, Corpus) {
    let v = Vocabulary::build(TEXT, 50).unwrap();
    let (c, _) = parse_corpus(TEXT, &v, SplitRole::Train).unwrap();
    (v, c)
}

pub fn sentences(v: &Vocabulary) -> Vec<Sentence> {
    ["the cat sat", "a dog ran on the mat", "the mat sat on a cat ran the"]
        .iter()
        .map(|s| Sentence::new(v.encode(s)).unwrap())
        .collect()
}

pub fn random_params(n: usize, scale: f64, seed: u64) -> Vec<f64> {
    let mut rng = substream(seed, 9);
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn log_softmax_at(scores: &[f64], k: usize) -> f64 {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
    scores[k] - m - z.ln()
}

pub struct RnnOracle {
    pub v: usize,
    pub h: usize,
    pub members: Vec<Vec<usize>>,
}

impl RnnOracle {
    fn input(&self, p: &[f64], w: usize, j: usize) -> f64 {
        p[w * self.h + j]
    }

    fn recurrent(&self, p: &[f64], i: usize, j: usize) -> f64 {
        p[self.v * self.h + i * self.h + j]
    }

    fn class_out(&self, p: &[f64], c: usize, j: usize) -> f64 {
        p[self.v * self.h + self.h * self.h + c * self.h + j]
    }

    fn word_out(&self, p: &[f64], w: usize, j: usize) -> f64 {
        let offset = self.v * self.h + self.h * self.h + self.members.len() * self.h;
        p[offset + w * self.h + j]
    }

    fn step(&self, p: &[f64], prev: &[f64], w: usize) -> Vec<f64> {
        (0..self.h)
            .map(|i| {
                let r: f64 = (0..self.h).map(|j| self.recurrent(p, i, j) * prev[j]).sum();
                sigmoid(r + self.input(p, w, i))
            })
            .collect()
    }

    fn log_prob(&self, p: &[f64], h: &[f64], target: usize) -> f64 {
        let dot = |f: &dyn Fn(usize) -> f64| (0..self.h).map(|j| f(j) * h[j]).sum::<f64>();
        let class_scores: Vec<f64> = (0..self.members.len())
            .map(|c| dot(&|j| self.class_out(p, c, j)))
            .collect();
        let c = self.members.iter().position(|m| m.contains(&target)).unwrap();
        let word_scores: Vec<f64> = self.members[c]
            .iter()
            .map(|&w| dot(&|j| self.word_out(p, w, j)))
            .collect();
        let k = self.members[c].iter().position(|&w| w == target).unwrap();
        log_softmax_at(&class_scores, c) + log_softmax_at(&word_scores, k)
    }

    /// `−ln p` where each output only sees the last `bptt` recurrent steps as
    /// functions of `p`; older states are frozen at their `base` values.
    pub fn truncated_loss(&self, p: &[f64], base: &[f64], inputs: &[usize], targets: &[usize], bptt: usize) -> f64 {
        let mut frozen = vec![vec![0.1; self.h]];
        for &x in inputs {
            let next = self.step(base, frozen.last().unwrap(), x);
            frozen.push(next);
        }
        let mut loss = 0.0;
        for t in 0..inputs.len() {
            let start = (t + 1).saturating_sub(bptt);
            let mut h = frozen[start].clone();
            for &x in &inputs[start..=t] {
                h = self.step(p, &h, x);
            }
            loss -= self.log_prob(p, &h, targets[t]);
        }
        loss
    }
}

/// Largest relative gradient error of a class-factored RNN over a few
/// sentences, after checking the loss itself against the oracle.
pub fn rnn_gradient_error(bptt: usize, classes: usize, seed: u64) -> f64 {
    let (v, train) = setup();
    let map = ClassMap::by_frequency(&train, &v, classes);
    let mut model = RnnModel::new(&v, map.clone(), 5, bptt, seed);
    let base = random_params(model.num_params(), 0.6, seed);
    model.set_params_flat(&base).unwrap();
    let oracle = RnnOracle {
        v: v.size(),
        h: 5,
        members: (0..map.num_classes())
            .map(|c| map.members(c).iter().map(|w| w.index()).collect())
            .collect(),
    };
    let mut worst: f64 = 0.0;
    for s in sentences(&v) {
        let mut inputs = vec![v.bos_id().index()];
        inputs.extend(s.tokens().iter().map(|t| t.index()));
        let mut targets: Vec<usize> = s.tokens().iter().map(|t| t.index()).collect();
        targets.push(v.eos_id().index());

        let (loss, grad) = model.sentence_gradient(&s);
        let oracle_loss = oracle.truncated_loss(&base, &base, &inputs, &targets, bptt);
        assert!((loss - oracle_loss).abs() < 1e-10, "{loss} vs {oracle_loss}");
        assert!((loss + model.log_prob(&s)).abs() < 1e-10);

        let analytic = model.gradient_flat(&grad);
        let report = GradientCheck::default().run(&base, &analytic, |p| {
            Some(oracle.truncated_loss(p, &base, &inputs, &targets, bptt))
        });
        assert_eq!(report.skipped, 0);
        worst = worst.max(report.max_rel_error);
    }
    worst
}

pub struct SrnnOracle {
    pub v: usize,
    pub l: usize,
}

impl SrnnOracle {
    pub fn score(&self, p: &[f64], s: &Sentence) -> f64 {
        let (l, v) = (self.l, self.v);
        let word = |w: usize, i: usize| p[l * l + w * l + i];
        let out = |i: usize| p[l * l + v * l + i];
        let mut x = vec![0.0; l];
        let mut total = 0.0;
        for t in s.tokens() {
            x = (0..l)
                .map(|i| sigmoid((0..l).map(|j| p[i * l + j] * x[j]).sum::<f64>() + word(t.index(), i)))
                .collect();
            total += (0..l).map(|i| out(i) * x[i]).sum::<f64>();
        }
        total
    }

    /// Hinge value, or `None` within 1e-3 of the kink.
    pub fn hinge(&self, p: &[f64], pair: &DistortedPair) -> Option<f64> {
        let arg = 1.0 + self.score(p, &pair.original) - self.score(p, &pair.distorted);
        (arg.abs() >= 1e-3).then(|| arg.max(0.0))
    }
}

pub fn pair(v: &Vocabulary, original: &str, distorted: &str) -> DistortedPair {
    DistortedPair {
        original: Sentence::new(v.encode(original)).unwrap(),
        distorted: Sentence::new(v.encode(distorted)).unwrap(),
        touched: 1,
        substitutions: 1,
        transpositions: 0,
    }
}

pub fn srnn_with(v: &Vocabulary, latent: usize, scale: f64, seed: u64) -> (SrnnModel, Vec<f64>) {
    let mut m = SrnnModel::new(v, latent, DistortionSpec::identity(0), seed);
    let p = random_params(m.num_params(), scale, seed);
    m.set_params_flat(&p).unwrap();
    (m, p)
}

