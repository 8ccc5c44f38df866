//! Contrastive entropy evaluation for language models.
//!
//! Perplexity needs exact, normalized probabilities. Contrastive entropy only
//! needs the *difference* between a model's log-scores on a test set and on a
//! distorted copy of it, so the normalizer cancels and unnormalized
//! sentence-level models can be compared with ordinary word-level ones.
//!
//! The crate ships four model families behind one [`metrics::LanguageModel`]
//! trait: interpolated modified Kneser-Ney n-grams ([`ngram`]), a class-factored
//! word-level RNN ([`rnn`]), and a margin-trained sentence-level RNN energy
//! model ([`srnn`]). The noisy channel lives in [`distortion`].

pub mod container;
pub mod corpus;
pub mod distortion;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod neural;
pub mod ngram;
pub mod rnn;
pub mod seeding;
pub mod srnn;
pub mod synthetic;

pub use error::{Error, Result};

/// Toolkit version embedded in every output file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/channel.md")]
    mod channel {}
    #[doc = include_str!("../../../book/src/kneser-ney.md")]
    mod kneser_ney {}
    #[doc = include_str!("../../../book/src/rnn.md")]
    mod rnn {}
    #[doc = include_str!("../../../book/src/srnn.md")]
    mod srnn {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
