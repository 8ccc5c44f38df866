//! Interpolated modified Kneser-Ney n-gram model.
//!
//! Each training sentence is padded as `<s> w1 .. wn </s>`; contexts never
//! reach past `<s>`. The highest order uses raw counts. Lower orders use
//! continuation counts (the number of distinct words seen immediately to the
//! left), except for n-grams that begin with `<s>`, which cannot be extended
//! to the left and keep their raw counts.
//!
//! For an order-`k` context `h` with adjusted counts `a(h, w)`:
//!
//! ```text
//! p_k(w | h) = [max(a(h,w) − D_k(a(h,w)), 0) + γ(h) · p_{k−1}(w | h')] / Σ_v a(h, v)
//! γ(h)       = D_k1 · N1(h) + D_k2 · N2(h) + D_k3+ · N3+(h)
//! ```
//!
//! where `h'` drops the oldest word of `h` and `N_r(h)` counts words with
//! adjusted count `r` after `h`. Unseen contexts defer entirely to the lower
//! order, and order 1 interpolates with a uniform distribution over every
//! predictable id (the whole vocabulary except `<s>`).

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{Container, ModelKind, PayloadReader, PayloadWriter};
use crate::corpus::{Corpus, Sentence, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::metrics::{LanguageModel, Unit};

pub const MAX_ORDER: usize = 5;
const ID_BITS: u32 = 24;
const FALLBACK_DISCOUNT: f64 = 0.75;

type Key = u128;

fn pack(ids: &[TokenId]) -> Key {
    ids.iter().fold(0, |key, id| (key << ID_BITS) | id.0 as Key)
}

fn unpack(mut key: Key, len: usize) -> Vec<TokenId> {
    let mask = (1u128 << ID_BITS) - 1;
    let mut ids = vec![TokenId(0); len];
    for slot in ids.iter_mut().rev() {
        *slot = TokenId((key & mask) as u32);
        key >>= ID_BITS;
    }
    ids
}

/// Discounts `[D1, D2, D3+]` for one order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discounts(pub [f64; 3]);

impl Discounts {
    #[inline]
    fn for_count(&self, count: u32) -> f64 {
        match count {
            0 => 0.0,
            1 => self.0[0],
            2 => self.0[1],
            _ => self.0[2],
        }
    }

    /// Chen-Goodman estimates from the count-of-counts `n[r-1]` for `r = 1..=4`.
    /// Returns `None` when a required count is zero or an estimate leaves its
    /// valid range `(0, r]`.
    pub fn estimate(n: [u64; 4]) -> Option<Self> {
        if n.contains(&0) {
            return None;
        }
        let [n1, n2, n3, n4] = n.map(|v| v as f64);
        let y = n1 / (n1 + 2.0 * n2);
        let d = [1.0 - 2.0 * y * n2 / n1, 2.0 - 3.0 * y * n3 / n2, 3.0 - 4.0 * y * n4 / n3];
        let valid = d.iter().enumerate().all(|(i, &di)| di > 0.0 && di <= (i + 1) as f64);
        valid.then_some(Discounts(d))
    }
}

/// How discounts are chosen at training time.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum DiscountMode {
    /// Count-of-count estimates, falling back to a flat 0.75 per order.
    #[default]
    Estimated,
    /// One absolute discount for every order and count.
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct ContextStats {
    total: u64,
    n: [u32; 3],
}

impl ContextStats {
    fn add(&mut self, count: u32) {
        self.total += count as u64;
        self.n[(count.min(3) - 1) as usize] += 1;
    }

    fn backoff_mass(&self, d: &Discounts) -> f64 {
        d.0[0] * self.n[0] as f64 + d.0[1] * self.n[1] as f64 + d.0[2] * self.n[2] as f64
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
struct NGramMeta {
    order: usize,
    discounts: Vec<Discounts>,
    fallback_orders: Vec<usize>,
    smoothing: String,
}

#[derive(Clone, Debug)]
pub struct NGramModel {
    order: usize,
    vocab: Vocabulary,
    /// `counts[k - 1]`: adjusted counts of k-grams.
    counts: Vec<HashMap<Key, u32>>,
    /// `contexts[k - 1]`: statistics of order-k contexts (length k − 1); index 0
    /// holds the single empty context of the unigram level.
    contexts: Vec<HashMap<Key, ContextStats>>,
    discounts: Vec<Discounts>,
    fallback_orders: Vec<usize>,
}

/// Trains an interpolated modified Kneser-Ney model of the given order.
pub fn train_kn(train: &Corpus, vocab: &Vocabulary, order: usize) -> Result<NGramModel> {
    NGramModel::train(train, vocab, order, DiscountMode::Estimated)
}

impl NGramModel {
    pub fn train(train: &Corpus, vocab: &Vocabulary, order: usize, mode: DiscountMode) -> Result<Self> {
        if !(2..=MAX_ORDER).contains(&order) {
            return Err(Error::InvalidArgument(format!(
                "n-gram order must be between 2 and {MAX_ORDER}, got {order}"
            )));
        }
        if vocab.size() >= 1 << ID_BITS {
            return Err(Error::InvalidArgument("vocabulary too large for n-gram keys".into()));
        }
        let bos = vocab.bos_id();

        let mut raw: Vec<HashMap<Key, u32>> = vec![HashMap::new(); order];
        let mut padded = Vec::new();
        for s in train.sentences() {
            padded.clear();
            padded.push(bos);
            padded.extend_from_slice(s.tokens());
            padded.push(vocab.eos_id());
            for i in 1..padded.len() {
                for k in 1..=order.min(i + 1) {
                    *raw[k - 1].entry(pack(&padded[i + 1 - k..=i])).or_insert(0) += 1;
                }
            }
        }

        // Lower orders: continuation counts, except <s>-initial n-grams.
        let mut counts: Vec<HashMap<Key, u32>> = vec![HashMap::new(); order];
        counts[order - 1] = raw[order - 1].clone();
        for k in 1..order {
            let mut cont: HashMap<Key, u32> = HashMap::new();
            let suffix_mask: Key = (1u128 << (ID_BITS * k as u32)) - 1;
            for &key in raw[k].keys() {
                *cont.entry(key & suffix_mask).or_insert(0) += 1;
            }
            let bos_shift = ID_BITS * (k as u32 - 1);
            let adjusted = &mut counts[k - 1];
            for (&key, &c) in &raw[k - 1] {
                let first = (key >> bos_shift) as u32;
                let a = if first == bos.0 { c } else { cont[&key] };
                adjusted.insert(key, a);
            }
        }

        let mut discounts = Vec::with_capacity(order);
        let mut fallback_orders = Vec::new();
        for (k, table) in counts.iter().enumerate() {
            let d = match mode {
                DiscountMode::Fixed(d) => {
                    if !(d > 0.0 && d <= 1.0) {
                        return Err(Error::InvalidArgument(format!("fixed discount {d} outside (0, 1]")));
                    }
                    Discounts([d; 3])
                }
                DiscountMode::Estimated => {
                    let mut n = [0u64; 4];
                    for &c in table.values() {
                        if (1..=4).contains(&c) {
                            n[c as usize - 1] += 1;
                        }
                    }
                    Discounts::estimate(n).unwrap_or_else(|| {
                        log::warn!(
                            "order {}: count-of-counts {n:?} cannot support modified discounts; using {FALLBACK_DISCOUNT}",
                            k + 1
                        );
                        fallback_orders.push(k + 1);
                        Discounts([FALLBACK_DISCOUNT; 3])
                    })
                }
            };
            discounts.push(d);
        }

        Ok(Self::assemble(order, vocab.clone(), counts, discounts, fallback_orders))
    }

    fn assemble(
        order: usize,
        vocab: Vocabulary,
        counts: Vec<HashMap<Key, u32>>,
        discounts: Vec<Discounts>,
        fallback_orders: Vec<usize>,
    ) -> Self {
        let mut contexts: Vec<HashMap<Key, ContextStats>> = vec![HashMap::new(); order];
        for (k, table) in counts.iter().enumerate() {
            for (&key, &a) in table {
                let ctx = key >> ID_BITS;
                contexts[k].entry(ctx).or_default().add(a);
            }
        }
        NGramModel {
            order,
            vocab,
            counts,
            contexts,
            discounts,
            fallback_orders,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn discounts(&self) -> &[Discounts] {
        &self.discounts
    }

    /// Orders whose discounts fell back to the flat default.
    pub fn fallback_orders(&self) -> &[usize] {
        &self.fallback_orders
    }

    /// Number of predictable ids: everything but `<s>`.
    pub fn prediction_size(&self) -> usize {
        self.vocab.size() - 1
    }

    /// Ids the model assigns probability to.
    pub fn prediction_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        let bos = self.vocab.bos_id();
        (0..self.vocab.size() as u32).map(TokenId).filter(move |&id| id != bos)
    }

    /// `p(word | history)`, where `history` is the full left context, usually
    /// starting with `<s>`. Only the last `order − 1` ids are used.
    pub fn prob(&self, history: &[TokenId], word: TokenId) -> f64 {
        let start = history.len().saturating_sub(self.order - 1);
        let history = &history[start..];

        let uni = &self.contexts[0][&0];
        let d = &self.discounts[0];
        let a = self.counts[0].get(&(word.0 as Key)).copied().unwrap_or(0);
        let floor = 1.0 / self.prediction_size() as f64;
        let mut p = ((a as f64 - d.for_count(a)).max(0.0) + uni.backoff_mass(d) * floor) / uni.total as f64;

        for k in 2..=history.len() + 1 {
            let ctx = &history[history.len() + 1 - k..];
            let ctx_key = pack(ctx);
            let Some(stats) = self.contexts[k - 1].get(&ctx_key) else {
                break;
            };
            let d = &self.discounts[k - 1];
            let a = self.counts[k - 1]
                .get(&((ctx_key << ID_BITS) | word.0 as Key))
                .copied()
                .unwrap_or(0);
            p = ((a as f64 - d.for_count(a)).max(0.0) + stats.backoff_mass(d) * p) / stats.total as f64;
        }
        p
    }

    /// Natural-log probability of a sentence including `</s>`.
    pub fn log_prob(&self, sentence: &Sentence) -> f64 {
        let mut padded = Vec::with_capacity(sentence.len() + 2);
        padded.push(self.vocab.bos_id());
        padded.extend_from_slice(sentence.tokens());
        padded.push(self.vocab.eos_id());
        (1..padded.len())
            .map(|i| self.prob(&padded[..i], padded[i]).ln())
            .sum()
    }

    /// Observed contexts of order `k` (as id sequences), for diagnostics and tests.
    pub fn contexts_of_order(&self, k: usize) -> Vec<Vec<TokenId>> {
        let mut out: Vec<_> = self.contexts[k - 1].keys().map(|&key| unpack(key, k - 1)).collect();
        out.sort();
        out
    }

    pub fn label(&self) -> String {
        format!("{}-gram KN", self.order)
    }

    pub fn to_container(&self) -> Container {
        let meta = NGramMeta {
            order: self.order,
            discounts: self.discounts.clone(),
            fallback_orders: self.fallback_orders.clone(),
            smoothing: "interpolated modified kneser-ney".into(),
        };
        let mut w = PayloadWriter::new();
        w.put_u32(self.order as u32);
        for (k, table) in self.counts.iter().enumerate() {
            let mut records: Vec<(Key, u32)> = table.iter().map(|(&key, &c)| (key, c)).collect();
            records.sort_unstable();
            w.put_u64(records.len() as u64);
            for (key, c) in records {
                for id in unpack(key, k + 1) {
                    w.put_u32(id.0);
                }
                w.put_u32(c);
            }
        }
        Container::new(
            ModelKind::Kn,
            serde_json::to_value(meta).expect("metadata serializes"),
            self.vocab.clone(),
            w.into_inner(),
        )
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(ModelKind::Kn)?;
        let meta: NGramMeta = c.metadata_as()?;
        let mut r = PayloadReader::new(&c.payload);
        let order = r.get_u32()? as usize;
        if order != meta.order || !(2..=MAX_ORDER).contains(&order) || meta.discounts.len() != order {
            return Err(Error::format("n-gram model", "inconsistent order"));
        }
        let mut counts = Vec::with_capacity(order);
        let mut ids = Vec::with_capacity(order);
        for k in 1..=order {
            let n = r.get_u64()? as usize;
            let mut table = HashMap::with_capacity(n);
            for _ in 0..n {
                ids.clear();
                for _ in 0..k {
                    let id = r.get_u32()?;
                    if id as usize >= c.vocab.size() {
                        return Err(Error::format("n-gram model", format!("id {id} out of range")));
                    }
                    ids.push(TokenId(id));
                }
                table.insert(pack(&ids), r.get_u32()?);
            }
            counts.push(table);
        }
        if !r.is_empty() {
            return Err(Error::format("n-gram model", "trailing bytes"));
        }
        if counts[0].is_empty() {
            return Err(Error::format("n-gram model", "no unigrams"));
        }
        Ok(Self::assemble(order, c.vocab.clone(), counts, meta.discounts, meta.fallback_orders))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

impl LanguageModel for NGramModel {
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
        NGramModel::label(self)
    }
}
