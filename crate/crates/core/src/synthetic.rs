//! A seeded toy language for tests, examples and smoke runs.
//!
//! Every sentence draws a hidden topic, then expands a small phrase grammar in
//! which content words come from topic-specific lexicons and function words
//! are shared. Because the topic is fixed for the whole sentence, a noun late
//! in the sentence depends on words well outside any short n-gram window,
//! which is exactly the kind of structure a recurrent model can exploit.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::seeding::{derive_seed, substream};

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

const DETERMINERS: &[&str] = &["the", "a", "this", "every", "some"];
const PREPOSITIONS: &[&str] = &["in", "near", "under", "with", "behind"];
const CONJUNCTIONS: &[&str] = &["and", "but", "while"];
const ADVERBS: &[&str] = &["often", "quietly", "never", "still"];

/// Shape of the toy language.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub topics: usize,
    pub nouns_per_topic: usize,
    pub verbs_per_topic: usize,
    pub adjectives_per_topic: usize,
    /// Topic-free nouns used inside prepositional phrases.
    pub shared_nouns: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            topics: 6,
            nouns_per_topic: 14,
            verbs_per_topic: 8,
            adjectives_per_topic: 6,
            shared_nouns: 10,
            seed: 2016,
        }
    }
}

/// Train, validation and test text, one sentence per line.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSplits {
    pub train: String,
    pub valid: String,
    pub test: String,
}

struct Topic {
    nouns: Vec<String>,
    verbs: Vec<String>,
    adjectives: Vec<String>,
}

/// Weighted word list with Zipf-like weights `1/(rank + 1)`.
struct Lexicon {
    topics: Vec<Topic>,
    shared: Vec<String>,
    zipf: Vec<WeightedIndex<f64>>,
}

fn pseudo_word(index: usize) -> String {
    let syllables = CONSONANTS.len() * VOWELS.len();
    let mut out = String::new();
    // offset past the one-syllable words so every word has at least two
    let mut k = index + syllables;
    loop {
        let s = k % syllables;
        out.push(CONSONANTS[s / VOWELS.len()] as char);
        out.push(VOWELS[s % VOWELS.len()] as char);
        k /= syllables;
        if k == 0 {
            break;
        }
        k -= 1;
    }
    out
}

impl Lexicon {
    fn new(spec: &SyntheticSpec) -> Self {
        let mut next = 0usize;
        let mut take = |n: usize| -> Vec<String> {
            let words = (next..next + n).map(pseudo_word).collect();
            next += n;
            words
        };
        let topics = (0..spec.topics)
            .map(|_| Topic {
                nouns: take(spec.nouns_per_topic),
                verbs: take(spec.verbs_per_topic),
                adjectives: take(spec.adjectives_per_topic),
            })
            .collect();
        let shared = take(spec.shared_nouns);
        let largest = spec
            .nouns_per_topic
            .max(spec.verbs_per_topic)
            .max(spec.adjectives_per_topic)
            .max(spec.shared_nouns)
            .max(DETERMINERS.len());
        let zipf = (1..=largest)
            .map(|n| WeightedIndex::new((0..n).map(|r| 1.0 / (r as f64 + 1.0))).expect("positive weights"))
            .collect();
        Lexicon { topics, shared, zipf }
    }

    fn pick<'a, T: AsRef<str>>(&self, words: &'a [T], rng: &mut ChaCha8Rng) -> &'a str {
        words[self.zipf[words.len() - 1].sample(rng)].as_ref()
    }
}

struct SentenceBuilder<'a> {
    lex: &'a Lexicon,
    topic: &'a Topic,
    words: Vec<&'a str>,
}

impl<'a> SentenceBuilder<'a> {
    fn noun_phrase(&mut self, rng: &mut ChaCha8Rng, shared: bool) {
        self.words.push(self.lex.pick(DETERMINERS, rng));
        if rng.random_bool(0.4) {
            self.words.push(self.lex.pick(&self.topic.adjectives, rng));
        }
        let noun = if shared {
            self.lex.pick(&self.lex.shared, rng)
        } else {
            self.lex.pick(&self.topic.nouns, rng)
        };
        self.words.push(noun);
    }

    fn clause(&mut self, rng: &mut ChaCha8Rng) {
        self.noun_phrase(rng, false);
        if rng.random_bool(0.5) {
            self.prepositional(rng);
        }
        if rng.random_bool(0.3) {
            self.words.push(self.lex.pick(ADVERBS, rng));
        }
        self.words.push(self.lex.pick(&self.topic.verbs, rng));
        self.noun_phrase(rng, false);
        if rng.random_bool(0.5) {
            self.prepositional(rng);
        }
    }

    fn prepositional(&mut self, rng: &mut ChaCha8Rng) {
        self.words.push(self.lex.pick(PREPOSITIONS, rng));
        self.noun_phrase(rng, true);
    }
}

/// Generates `sentences` lines of the toy language, using `stream` to keep
/// separate splits independent under the same spec.
pub fn generate(spec: &SyntheticSpec, sentences: usize, stream: u64) -> String {
    let lex = Lexicon::new(spec);
    let mut rng = substream(derive_seed(spec.seed, stream), 0);
    let mut out = String::new();
    for _ in 0..sentences {
        let topic = &lex.topics[rng.random_range(0..lex.topics.len())];
        let mut b = SentenceBuilder {
            lex: &lex,
            topic,
            words: Vec::new(),
        };
        b.clause(&mut rng);
        if rng.random_bool(0.4) {
            b.words.push(lex.pick(CONJUNCTIONS, &mut rng));
            b.clause(&mut rng);
        }
        out.push_str(&b.words.join(" "));
        out.push('\n');
    }
    out
}

/// Three independent splits drawn from the same language.
pub fn generate_splits(spec: &SyntheticSpec, train: usize, valid: usize, test: usize) -> SyntheticSplits {
    SyntheticSplits {
        train: generate(spec, train, 1),
        valid: generate(spec, valid, 2),
        test: generate(spec, test, 3),
    }
}
