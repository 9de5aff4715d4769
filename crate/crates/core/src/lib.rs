//! Token-level expectancy analysis.
//!
//! A document is scored token by token against a causal language model's
//! predictive distribution. For each token the engine reports surprisal,
//! the distribution's entropy, the standard deviation of surprisal and the
//! resulting z-score, then aggregates them into ranked, missing-token,
//! sentence and paragraph views. The same backends drive a two-candidate
//! cloze harness, a log-perplexity comparison and a verbatim-recall probe.
//!
//! The numeric core in [`stats`] is generic over [`num_traits::Float`]; the
//! aliases below fix it to the precisions used in practice.

pub mod aggregate;
pub mod backend;
pub mod bench;
pub mod canonical;
pub mod error;
pub mod expectancy;
pub mod memorization;
pub mod render;
pub mod stats;

pub use backend::{
    Backend, BackendDescriptor, BackendError, NextTokenDistribution, TokenId, TokenSpan,
};
pub use error::AnalysisError;
pub use expectancy::{analyze_document, AnalysisOptions, DocumentAnalysis, Exactness, TokenStats};

/// Entropy and surprisal spread in double precision.
pub type Moments = stats::SurprisalMoments<f64>;
/// Entropy and surprisal spread in single precision.
pub type Moments32 = stats::SurprisalMoments<f32>;
