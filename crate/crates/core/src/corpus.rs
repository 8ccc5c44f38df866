//! Tokenized text ingestion.
//!
//! Input files carry one pre-tokenized sentence per line with tokens separated
//! by spaces. A [`Vocabulary`] is built from the training split only; every
//! other split is encoded against it with out-of-vocabulary words mapped to
//! `<unk>`.
//!
//! Id layout is fixed: `<unk>` = 0, `<s>` = 1, `</s>` = 2, then the retained
//! words in decreasing frequency order. A literal `<unk>` in the training text
//! (as in the usual Penn Treebank distribution) is counted like any other type
//! and occupies one slot of the cap; the sentence markers never do.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

const VOCAB_MAGIC: &str = "#cent-vocab";
const VOCAB_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Bidirectional token/id map with reserved `<unk>`, `<s>` and `</s>` entries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, TokenId>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    pub const UNK_ID: TokenId = TokenId(0);
    pub const BOS_ID: TokenId = TokenId(1);
    pub const EOS_ID: TokenId = TokenId(2);
    const RESERVED: usize = 3;

    fn with_reserved() -> Self {
        let mut vocab = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for tok in [UNK, BOS, EOS] {
            vocab.push(tok);
        }
        vocab
    }

    fn push(&mut self, token: &str) -> TokenId {
        let id = TokenId(self.id_to_token.len() as u32);
        self.token_to_id.insert(token.to_owned(), id);
        self.id_to_token.push(token.to_owned());
        id
    }

    /// Builds a vocabulary holding the `cap` most frequent training types.
    ///
    /// Frequency ties are broken by first occurrence in `training_text`.
    pub fn build(training_text: &str, cap: usize) -> Result<Self> {
        if cap == 0 {
            return Err(Error::InvalidArgument("vocabulary cap must be at least 1".into()));
        }
        // (count, first occurrence)
        let mut counts: HashMap<&str, (u64, usize)> = HashMap::new();
        let mut position = 0usize;
        for tok in training_text.split_whitespace() {
            if tok == BOS || tok == EOS {
                continue;
            }
            let entry = counts.entry(tok).or_insert((0, position));
            entry.0 += 1;
            position += 1;
        }
        if counts.is_empty() {
            return Err(Error::EmptyInput("training text contains no tokens".into()));
        }
        let mut ranked: Vec<(&str, u64, usize)> =
            counts.into_iter().map(|(t, (c, first))| (t, c, first)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));

        let mut vocab = Self::with_reserved();
        for (tok, _, _) in ranked.into_iter().take(cap) {
            if tok != UNK {
                vocab.push(tok);
            }
        }
        Ok(vocab)
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn unk_id(&self) -> TokenId {
        Self::UNK_ID
    }

    pub fn bos_id(&self) -> TokenId {
        Self::BOS_ID
    }

    pub fn eos_id(&self) -> TokenId {
        Self::EOS_ID
    }

    pub fn is_reserved(&self, id: TokenId) -> bool {
        id.index() < Self::RESERVED
    }

    /// Ids of ordinary (non-reserved) words.
    pub fn word_ids(&self) -> impl ExactSizeIterator<Item = TokenId> + Clone {
        (Self::RESERVED as u32..self.size() as u32).map(TokenId)
    }

    pub fn num_words(&self) -> usize {
        self.size() - Self::RESERVED
    }

    /// Maps a token to its id, falling back to `<unk>`.
    pub fn lookup(&self, token: &str) -> TokenId {
        match self.token_to_id.get(token) {
            Some(&id) if id != Self::BOS_ID && id != Self::EOS_ID => id,
            _ => Self::UNK_ID,
        }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id.index()).map(String::as_str)
    }

    pub fn encode(&self, line: &str) -> Vec<TokenId> {
        line.split_whitespace().map(|t| self.lookup(t)).collect()
    }

    pub fn decode(&self, sentence: &Sentence) -> String {
        let mut out = String::new();
        for (i, id) in sentence.tokens().iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.token(*id).unwrap_or(UNK));
        }
        out
    }

    /// Writes the versioned text form: a header line, then `token<TAB>id` per id.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "{VOCAB_MAGIC}\tversion={VOCAB_VERSION}\tunk={}\tbos={}\teos={}\tsize={}",
            Self::UNK_ID,
            Self::BOS_ID,
            Self::EOS_ID,
            self.size()
        )?;
        for (id, tok) in self.id_to_token.iter().enumerate() {
            writeln!(w, "{tok}\t{id}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("vocabulary tokens are UTF-8")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |detail: String| Error::format("vocabulary", detail);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("missing header".into()))?;
        let mut fields = header.split('\t');
        if fields.next() != Some(VOCAB_MAGIC) {
            return Err(bad(format!("bad header `{header}`")));
        }
        let mut kv = HashMap::new();
        for field in fields {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| bad(format!("bad header field `{field}`")))?;
            let v: u64 = v.parse().map_err(|_| bad(format!("bad header value `{field}`")))?;
            kv.insert(k, v);
        }
        if kv.get("version") != Some(&(VOCAB_VERSION as u64)) {
            return Err(bad("unsupported version".into()));
        }
        let reserved = [
            ("unk", Self::UNK_ID),
            ("bos", Self::BOS_ID),
            ("eos", Self::EOS_ID),
        ];
        for (key, id) in reserved {
            if kv.get(key) != Some(&(id.0 as u64)) {
                return Err(bad(format!("reserved id `{key}` must be {id}")));
            }
        }
        let size = *kv.get("size").ok_or_else(|| bad("missing size".into()))? as usize;

        let mut vocab = Vocabulary {
            token_to_id: HashMap::with_capacity(size),
            id_to_token: Vec::with_capacity(size),
        };
        for (lineno, line) in lines.enumerate() {
            let (tok, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| bad(format!("line {}: expected token<TAB>id", lineno + 2)))?;
            let id: usize = id
                .parse()
                .map_err(|_| bad(format!("line {}: bad id `{id}`", lineno + 2)))?;
            if id != vocab.size() {
                return Err(bad(format!("line {}: ids must be dense and ordered", lineno + 2)));
            }
            if vocab.token_to_id.contains_key(tok) {
                return Err(bad(format!("duplicate token `{tok}`")));
            }
            vocab.push(tok);
        }
        if vocab.size() != size || size < Self::RESERVED {
            return Err(bad(format!("header size {size} but {} entries", vocab.size())));
        }
        for (tok, id) in [(UNK, Self::UNK_ID), (BOS, Self::BOS_ID), (EOS, Self::EOS_ID)] {
            if vocab.token_to_id.get(tok) != Some(&id) {
                return Err(bad(format!("reserved token `{tok}` not at id {id}")));
            }
        }
        Ok(vocab)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Reads a training file and builds its vocabulary.
pub fn build_vocabulary(path: &Path, cap: usize) -> Result<Vocabulary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Vocabulary::build(&text, cap)
}

/// A non-empty token sequence without sentence markers.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Sentence(Vec<TokenId>);

impl Sentence {
    pub fn new(tokens: Vec<TokenId>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("sentence has no tokens".into()));
        }
        Ok(Sentence(tokens))
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn into_tokens(self) -> Vec<TokenId> {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    Train,
    Valid,
    Test,
}

impl fmt::Display for SplitRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitRole::Train => "train",
            SplitRole::Valid => "valid",
            SplitRole::Test => "test",
        })
    }
}

/// Which events count as units when normalizing word-level entropies.
///
/// The end-of-sentence prediction is a real event scored by word-level
/// models, so it is counted by default; the sentence-start marker never is.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EosConvention {
    #[default]
    CountEos,
    WordsOnly,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    sentences: Vec<Sentence>,
    word_count: usize,
    role: SplitRole,
}

impl Corpus {
    pub fn new(sentences: Vec<Sentence>, role: SplitRole) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::EmptyInput(format!("{role} corpus has no sentences")));
        }
        let word_count = sentences.iter().map(Sentence::len).sum();
        Ok(Corpus {
            sentences,
            word_count,
            role,
        })
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn word_count(&self) -> usize {
        self.word_count
    }

    pub fn role(&self) -> SplitRole {
        self.role
    }

    /// Number of predicted events under `conv`.
    pub fn unit_count(&self, conv: EosConvention) -> usize {
        match conv {
            EosConvention::CountEos => self.word_count + self.sentences.len(),
            EosConvention::WordsOnly => self.word_count,
        }
    }

    /// First `n` sentences (at least one), keeping the role.
    pub fn truncated(&self, n: usize) -> Corpus {
        let n = n.clamp(1, self.sentences.len());
        Corpus::new(self.sentences[..n].to_vec(), self.role).expect("n >= 1")
    }

    pub fn write_to<W: Write>(&self, vocab: &Vocabulary, mut w: W) -> std::io::Result<()> {
        for s in &self.sentences {
            writeln!(w, "{}", vocab.decode(s))?;
        }
        Ok(())
    }

    pub fn to_text(&self, vocab: &Vocabulary) -> String {
        let mut buf = Vec::new();
        self.write_to(vocab, &mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("vocabulary tokens are UTF-8")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub skipped_lines: usize,
    pub oov_tokens: usize,
}

/// Encodes one-sentence-per-line text against `vocab`.
pub fn parse_corpus(text: &str, vocab: &Vocabulary, role: SplitRole) -> Result<(Corpus, LoadStats)> {
    let mut stats = LoadStats::default();
    let mut sentences = Vec::new();
    for line in text.lines() {
        let mut tokens = Vec::new();
        for tok in line.split_whitespace() {
            let id = vocab.lookup(tok);
            if id == Vocabulary::UNK_ID && tok != UNK {
                stats.oov_tokens += 1;
            }
            tokens.push(id);
        }
        match Sentence::new(tokens) {
            Ok(s) => sentences.push(s),
            Err(_) => stats.skipped_lines += 1,
        }
    }
    let corpus = Corpus::new(sentences, role)?;
    let expected: usize = text.lines().map(|l| l.split_whitespace().count()).sum();
    debug_assert_eq!(corpus.word_count(), expected);
    Ok((corpus, stats))
}

/// Loads a corpus file, logging a warning when empty lines were skipped.
pub fn load_corpus(path: &Path, vocab: &Vocabulary, role: SplitRole) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (corpus, stats) = parse_corpus(&text, vocab, role).map_err(|e| match e {
        Error::EmptyInput(_) => Error::EmptyInput(format!("{} has no sentences", path.display())),
        other => other,
    })?;
    if stats.skipped_lines > 0 {
        log::warn!(
            "{}: skipped {} line(s) with no tokens",
            path.display(),
            stats.skipped_lines
        );
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_tokens_fit_under_cap() {
        let v = Vocabulary::build("a a b", 10).unwrap();
        assert_eq!(v.size(), 2 + 3);
        assert_ne!(v.lookup("a"), v.unk_id());
        assert_ne!(v.lookup("b"), v.unk_id());
        assert_eq!(v.lookup("zzz"), v.unk_id());
    }

    #[test]
    fn cap_forces_unk_mapping() {
        let v = Vocabulary::build("a a b c", 1).unwrap();
        assert_ne!(v.lookup("a"), v.unk_id());
        assert_eq!(v.lookup("b"), v.unk_id());
        assert_eq!(v.lookup("c"), v.unk_id());
        assert_eq!(v.size(), 1 + 3);
    }

    #[test]
    fn ties_broken_by_first_occurrence() {
        let v = Vocabulary::build("c b a a b c d", 2).unwrap();
        // c and b and a all have count 2; c appears first, then b.
        assert_ne!(v.lookup("c"), v.unk_id());
        assert_ne!(v.lookup("b"), v.unk_id());
        assert_eq!(v.lookup("a"), v.unk_id());
        assert_eq!(v.lookup("c"), TokenId(3));
    }

    #[test]
    fn literal_unk_occupies_a_cap_slot() {
        let v = Vocabulary::build("<unk> <unk> <unk> x x y", 2).unwrap();
        assert_eq!(v.lookup(UNK), v.unk_id());
        assert_ne!(v.lookup("x"), v.unk_id());
        assert_eq!(v.lookup("y"), v.unk_id());
        assert_eq!(v.size(), 1 + 3);
    }

    #[test]
    fn markers_never_looked_up_as_themselves() {
        let v = Vocabulary::build("a <s> b </s>", 10).unwrap();
        assert_eq!(v.size(), 2 + 3);
        assert_eq!(v.lookup(BOS), v.unk_id());
        assert_eq!(v.lookup(EOS), v.unk_id());
    }

    #[test]
    fn empty_input_and_zero_cap_rejected() {
        assert!(matches!(Vocabulary::build("  \n ", 5), Err(Error::EmptyInput(_))));
        assert!(matches!(Vocabulary::build("a", 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn reserved_ids_are_distinct() {
        let v = Vocabulary::build("a", 1).unwrap();
        let ids = [v.unk_id(), v.bos_id(), v.eos_id()];
        assert!(ids.iter().all(|id| v.is_reserved(*id)));
        assert_ne!(ids[0], ids[1]);
        assert_ne!(ids[1], ids[2]);
        assert_ne!(ids[0], ids[2]);
        assert_eq!(v.word_ids().collect::<Vec<_>>(), vec![TokenId(3)]);
    }

    #[test]
    fn parse_corpus_maps_oov_to_unk() {
        let v = Vocabulary::build("a b", 10).unwrap();
        let (c, stats) = parse_corpus("a b\nc", &v, SplitRole::Test).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.word_count(), 3);
        assert_eq!(c.sentences()[1].tokens()[0], v.unk_id());
        assert_eq!(stats.oov_tokens, 1);
        assert_eq!(c.unit_count(EosConvention::CountEos), 5);
        assert_eq!(c.unit_count(EosConvention::WordsOnly), 3);
    }

    #[test]
    fn blank_lines_are_skipped_and_counted() {
        let v = Vocabulary::build("a b", 10).unwrap();
        let (c, stats) = parse_corpus("a\n\n  \nb a\n", &v, SplitRole::Train).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(stats.skipped_lines, 2);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let v = Vocabulary::build("a b", 10).unwrap();
        assert!(parse_corpus("", &v, SplitRole::Test).is_err());
        assert!(parse_corpus("\n\n", &v, SplitRole::Test).is_err());
        assert!(Sentence::new(vec![]).is_err());
    }

    #[test]
    fn vocabulary_text_round_trip() {
        let v = Vocabulary::build("the cat sat on the mat", 4).unwrap();
        let text = v.to_text();
        assert!(text.starts_with("#cent-vocab\tversion=1\tunk=0\tbos=1\teos=2\tsize=7\n"));
        assert_eq!(Vocabulary::parse(&text).unwrap(), v);
    }

    #[test]
    fn vocabulary_parse_rejects_bad_headers() {
        assert!(Vocabulary::parse("").is_err());
        assert!(Vocabulary::parse("#cent-vocab\tversion=2\tunk=0\tbos=1\teos=2\tsize=3\n").is_err());
        let swapped = "#cent-vocab\tversion=1\tunk=1\tbos=0\teos=2\tsize=3\n<unk>\t0\n<s>\t1\n</s>\t2\n";
        assert!(Vocabulary::parse(swapped).is_err());
        let sparse = "#cent-vocab\tversion=1\tunk=0\tbos=1\teos=2\tsize=4\n<unk>\t0\n<s>\t1\n</s>\t2\na\t5\n";
        assert!(Vocabulary::parse(sparse).is_err());
    }
}
