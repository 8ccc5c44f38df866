//! Kneser-Ney probabilities against a direct evaluation of the smoothing
//! formulas that recounts everything from the raw sentences on every query.

mod support;

use contrastive_entropy::corpus::{parse_corpus, Sentence, SplitRole, Vocabulary};
use contrastive_entropy::ngram::{DiscountMode, NGramModel};
use support::kn::*;

#[test]
fn trigram_matches_direct_evaluation() {
    let err = compare(SMALL, 3, DiscountMode::Estimated);
    assert!(err < 1e-10, "max abs difference {err:e}");
}

#[test]
fn higher_orders_match_direct_evaluation() {
    for order in [2, 4, 5] {
        let err = compare(SMALL, order, DiscountMode::Estimated);
        assert!(err < 1e-10, "order {order}: max abs difference {err:e}");
    }
}

#[test]
fn fixed_discounts_match_direct_evaluation() {
    for d in [0.3, 0.75, 1.0] {
        let err = compare(SMALL, 3, DiscountMode::Fixed(d));
        assert!(err < 1e-10, "discount {d}: max abs difference {err:e}");
    }
}

#[test]
fn estimated_discounts_match_direct_evaluation() {
    let vocab = Vocabulary::build(RICH, 100).unwrap();
    let (train, _) = parse_corpus(RICH, &vocab, SplitRole::Train).unwrap();
    let model = NGramModel::train(&train, &vocab, 3, DiscountMode::Estimated).unwrap();
    assert_eq!(model.fallback_orders(), &[1]);
    for order in 2..=5 {
        let err = compare(RICH, order, DiscountMode::Estimated);
        assert!(err < 1e-10, "order {order}: max abs difference {err:e}");
    }
}

#[test]
fn sentence_scores_match_direct_evaluation() {
    let vocab = Vocabulary::build(SMALL, 100).unwrap();
    let (train, _) = parse_corpus(SMALL, &vocab, SplitRole::Train).unwrap();
    let model = NGramModel::train(&train, &vocab, 3, DiscountMode::Estimated).unwrap();
    let oracle = Oracle::new(SMALL, &vocab, 3, None);
    for line in ["a b a c", "d d d", "c a b a b c"] {
        let s = Sentence::new(vocab.encode(line)).unwrap();
        let mut padded = vec!["<s>".to_owned()];
        padded.extend(line.split(' ').map(str::to_owned));
        padded.push("</s>".to_owned());
        let expected: f64 = (1..padded.len())
            .map(|i| oracle.prob_after(&padded[..i], &padded[i]).ln())
            .sum();
        assert!((model.log_prob(&s) - expected).abs() < 1e-10);
    }
}
