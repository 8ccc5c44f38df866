//! A direct evaluation of the Kneser-Ney formulas that recounts everything
//! from the raw sentences on every query.

use std::collections::BTreeSet;

use contrastive_entropy::corpus::{parse_corpus, SplitRole, TokenId, Vocabulary};
use contrastive_entropy::ngram::{DiscountMode, NGramModel};

pub struct Oracle {
    order: usize,
    padded: Vec<Vec<String>>,
    vocab: Vec<String>,
    pub discounts: Vec<[f64; 3]>,
}

impl Oracle {
    pub fn new(text: &str, vocab: &Vocabulary, order: usize, fixed: Option<f64>) -> Self {
        let padded = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let mut s = vec!["<s>".to_owned()];
                s.extend(l.split_whitespace().map(|w| {
                    if vocab.contains(w) {
                        w.to_owned()
                    } else {
                        "<unk>".to_owned()
                    }
                }));
                s.push("</s>".to_owned());
                s
            })
            .collect();
        let names = (0..vocab.size() as u32)
            .map(|i| vocab.token(TokenId(i)).unwrap().to_owned())
            .collect();
        let mut o = Oracle {
            order,
            padded,
            vocab: names,
            discounts: Vec::new(),
        };
        o.discounts = (1..=order)
            .map(|k| match fixed {
                Some(d) => [d; 3],
                None => o.estimate_discounts(k),
            })
            .collect();
        o
    }

    fn raw(&self, gram: &[String]) -> usize {
        let k = gram.len();
        self.padded
            .iter()
            .map(|s| (1..s.len()).filter(|&i| i + 1 >= k && s[i + 1 - k..=i] == *gram).count())
            .sum()
    }

    fn adjusted(&self, gram: &[String]) -> usize {
        if gram.len() == self.order || gram[0] == "<s>" {
            return self.raw(gram);
        }
        self.vocab
            .iter()
            .filter(|v| {
                let mut longer = vec![(*v).clone()];
                longer.extend_from_slice(gram);
                self.raw(&longer) > 0
            })
            .count()
    }

    fn observed(&self, k: usize) -> BTreeSet<Vec<String>> {
        let mut out = BTreeSet::new();
        for s in &self.padded {
            for i in 1..s.len() {
                if i + 1 >= k {
                    out.insert(s[i + 1 - k..=i].to_vec());
                }
            }
        }
        out
    }

    fn estimate_discounts(&self, k: usize) -> [f64; 3] {
        let mut n = [0.0f64; 4];
        for g in self.observed(k) {
            let c = self.adjusted(&g);
            if (1..=4).contains(&c) {
                n[c - 1] += 1.0;
            }
        }
        let fallback = [0.75; 3];
        if n.contains(&0.0) {
            return fallback;
        }
        let y = n[0] / (n[0] + 2.0 * n[1]);
        let d = [
            1.0 - 2.0 * y * n[1] / n[0],
            2.0 - 3.0 * y * n[2] / n[1],
            3.0 - 4.0 * y * n[3] / n[2],
        ];
        if d.iter().enumerate().all(|(i, &x)| x > 0.0 && x <= (i + 1) as f64) {
            d
        } else {
            fallback
        }
    }

    fn discount(&self, k: usize, c: usize) -> f64 {
        match c {
            0 => 0.0,
            1 => self.discounts[k - 1][0],
            2 => self.discounts[k - 1][1],
            _ => self.discounts[k - 1][2],
        }
    }

    /// `p(w | h)` with `h` already cut to at most `order − 1` words.
    fn prob(&self, h: &[String], w: &str) -> f64 {
        let k = h.len() + 1;
        let with = |v: &str| {
            let mut g = h.to_vec();
            g.push(v.to_owned());
            g
        };
        let predictable: Vec<&String> = self.vocab.iter().filter(|v| *v != "<s>").collect();
        let counts: Vec<usize> = self.vocab.iter().map(|v| self.adjusted(&with(v))).collect();
        let total: usize = counts.iter().sum();
        let lower = if h.is_empty() {
            1.0 / predictable.len() as f64
        } else {
            self.prob(&h[1..], w)
        };
        if total == 0 {
            return lower;
        }
        let gamma: f64 = counts.iter().map(|&c| self.discount(k, c)).sum();
        let c = self.adjusted(&with(w));
        ((c as f64 - self.discount(k, c)).max(0.0) + gamma * lower) / total as f64
    }

    pub fn prob_after(&self, history: &[String], w: &str) -> f64 {
        let start = history.len().saturating_sub(self.order - 1);
        self.prob(&history[start..], w)
    }
}

pub const SMALL: &str = "a b a c\nb a b\nc a b a\na a b c b\nb c a\na b\nc c a b\nd a b\n";
/// 50 tokens whose bigram and trigram count-of-counts support estimated discounts.
pub const RICH: &str = "b c\nd b d e b d\nd b b b b e\nd c a\nd c d\nd c\nc a d d\nc d\na d c\nc a c a d e\nd c\nb c a\nb d d f\nd e\nb f\n";

pub fn histories(vocab: &Vocabulary) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for line in ["a b a c b", "c c a d e", "b b b a", "x a c"] {
        let mut h = vec!["<s>".to_owned()];
        for w in line.split(' ') {
            out.push(h.clone());
            h.push(vocab.token(vocab.lookup(w)).unwrap().to_owned());
        }
        out.push(h);
    }
    out
}

/// Largest absolute probability difference between the model and the oracle.
pub fn compare(text: &str, order: usize, mode: DiscountMode) -> f64 {
    let vocab = Vocabulary::build(text, 100).unwrap();
    let (train, _) = parse_corpus(text, &vocab, SplitRole::Train).unwrap();
    assert!(train.word_count() <= 50);
    let model = NGramModel::train(&train, &vocab, order, mode).unwrap();
    let fixed = match mode {
        DiscountMode::Fixed(d) => Some(d),
        DiscountMode::Estimated => None,
    };
    let oracle = Oracle::new(text, &vocab, order, fixed);
    for (k, d) in model.discounts().iter().enumerate() {
        for (a, b) in d.0.iter().zip(&oracle.discounts[k]) {
            assert!((a - b).abs() < 1e-12, "order {} discount {a} vs {b}", k + 1);
        }
    }
    let mut worst: f64 = 0.0;
    for h in histories(&vocab) {
        // lookup maps the "<s>" marker to <unk>, so restore it by id
        let mut ids: Vec<TokenId> = h.iter().map(|w| vocab.lookup(w)).collect();
        ids[0] = vocab.bos_id();
        let mut mass = 0.0;
        for w in model.prediction_ids() {
            let name = vocab.token(w).unwrap();
            let p = model.prob(&ids, w);
            let q = oracle.prob_after(&h, name);
            worst = worst.max((p - q).abs());
            mass += p;
        }
        assert!((mass - 1.0).abs() < 1e-12, "history {h:?} sums to {mass}");
    }
    worst
}

