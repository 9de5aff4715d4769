//! Sources of next-token predictive distributions.
//!
//! A [`Backend`] tokenizes a document, scores a token sequence into one
//! [`NextTokenDistribution`] per position, and decodes greedily. All
//! log-probabilities crossing this boundary are in nats.

mod http;
mod logits;
mod replay;
mod synthetic;
mod vocab;

pub use http::{HttpBackend, HttpConfig, LogBase};
pub use logits::{LogitsBackend, LogitsModel};
pub use replay::{parse_fixture, ReplayBackend, ReplayDocument, ReplayHeader};
pub use synthetic::SyntheticBackend;
pub use vocab::Vocab;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats;

/// Vocabulary index.
pub type TokenId = u32;

/// Tolerance for `logsumexp = 0` on every distribution.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error(
        "text needs {tokens} tokens but the context holds {max_context}; \
         the first {max_prefix_tokens} tokens ({max_prefix_bytes} bytes) fit"
    )]
    ContextOverflow {
        tokens: usize,
        max_context: usize,
        max_prefix_tokens: usize,
        max_prefix_bytes: usize,
    },
    #[error("cannot tokenize text at byte {byte}: {reason}")]
    Untokenizable { byte: usize, reason: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("replay fixture mismatch: {0}")]
    FixtureMismatch(String),
    #[error("generation unsupported: {0}")]
    GenerationUnsupported(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    UnknownToken { id: TokenId, vocab_size: usize },
    #[error("fixture parse error at line {line}: {message}")]
    FixtureParse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One tokenizer unit and its byte extent in the source text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub id: TokenId,
    pub text: String,
    pub byte_start: usize,
    pub byte_end: usize,
}

/// Result of tokenizing a document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenization {
    pub spans: Vec<TokenSpan>,
    /// Set when the tokenizer rewrote the text, so span texts no longer
    /// concatenate to the input.
    pub normalized: bool,
}

/// Concatenates span texts.
pub fn detokenize(spans: &[TokenSpan]) -> String {
    spans.iter().map(|s| s.text.as_str()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistributionKind {
    Full,
    #[serde(rename = "topk")]
    TopK,
}

/// Predictive distribution over the vocabulary at one position.
///
/// Entries are sorted by descending log-probability, ties by ascending id.
/// A top-k distribution carries the log of its unlisted mass in
/// `tail_logprob`; `-inf` means the listed entries hold all the mass.
#[derive(Debug, Clone, PartialEq)]
pub struct NextTokenDistribution {
    kind: DistributionKind,
    entries: Vec<(TokenId, f64)>,
    tail_logprob: Option<f64>,
    context_position: usize,
}

impl NextTokenDistribution {
    /// A distribution listing the whole support.
    pub fn full(
        context_position: usize,
        entries: Vec<(TokenId, f64)>,
    ) -> Result<Self, BackendError> {
        Self::build(DistributionKind::Full, context_position, entries, None)
    }

    /// A truncated distribution. With `tail_logprob = None` the tail is the
    /// complement of the listed mass.
    pub fn top_k(
        context_position: usize,
        entries: Vec<(TokenId, f64)>,
        tail_logprob: Option<f64>,
    ) -> Result<Self, BackendError> {
        let tail = match tail_logprob {
            Some(t) => t,
            None => {
                let listed: f64 = entries.iter().map(|&(_, lp)| lp.exp()).sum();
                if listed >= 1.0 {
                    f64::NEG_INFINITY
                } else {
                    (-listed).ln_1p()
                }
            }
        };
        Self::build(DistributionKind::TopK, context_position, entries, Some(tail))
    }

    /// Full distribution from raw logits indexed by token id.
    pub fn from_logits(context_position: usize, logits: &[f64]) -> Result<Self, BackendError> {
        let lp = stats::log_softmax(logits);
        let entries = lp
            .into_iter()
            .enumerate()
            .map(|(id, l)| (id as TokenId, l))
            .collect();
        Self::full(context_position, entries)
    }

    fn build(
        kind: DistributionKind,
        context_position: usize,
        mut entries: Vec<(TokenId, f64)>,
        tail_logprob: Option<f64>,
    ) -> Result<Self, BackendError> {
        if entries.iter().any(|&(_, lp)| lp.is_nan() || lp > NORMALIZATION_TOLERANCE) {
            return Err(BackendError::InvalidDistribution(format!(
                "position {context_position}: log-probabilities must be finite and <= 0"
            )));
        }
        if tail_logprob.is_some_and(|t| t.is_nan()) {
            return Err(BackendError::InvalidDistribution(format!(
                "position {context_position}: tail log-probability is NaN"
            )));
        }
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut ids: Vec<TokenId> = entries.iter().map(|e| e.0).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(BackendError::InvalidDistribution(format!(
                "position {context_position}: duplicate token ids"
            )));
        }
        let mut lps: Vec<f64> = entries.iter().map(|e| e.1).collect();
        lps.extend(tail_logprob);
        let lse = stats::logsumexp(&lps);
        if lse.is_nan() || lse.abs() > NORMALIZATION_TOLERANCE {
            return Err(BackendError::InvalidDistribution(format!(
                "position {context_position}: logsumexp is {lse}, expected 0"
            )));
        }
        Ok(Self {
            kind,
            entries,
            tail_logprob,
            context_position,
        })
    }

    pub fn kind(&self) -> DistributionKind {
        self.kind
    }

    pub fn entries(&self) -> &[(TokenId, f64)] {
        &self.entries
    }

    pub fn tail_logprob(&self) -> Option<f64> {
        self.tail_logprob
    }

    /// Index of the token this distribution predicts.
    pub fn context_position(&self) -> usize {
        self.context_position
    }

    pub fn is_exact(&self) -> bool {
        self.kind == DistributionKind::Full
    }

    /// Log-probability of `id` if it is listed.
    pub fn logprob_of(&self, id: TokenId) -> Option<f64> {
        self.entries.iter().find(|e| e.0 == id).map(|e| e.1)
    }

    /// 1-based rank of `id` among the listed entries.
    pub fn rank_of(&self, id: TokenId) -> Option<usize> {
        self.entries.iter().position(|e| e.0 == id).map(|i| i + 1)
    }

    /// Most probable listed token; ties resolve to the lowest id.
    pub fn argmax(&self) -> Option<TokenId> {
        self.entries.first().map(|e| e.0)
    }

    /// Listed log-probabilities followed by the tail pseudo-event, if any.
    pub fn support_logprobs(&self) -> Vec<f64> {
        let mut lps: Vec<f64> = self.entries.iter().map(|e| e.1).collect();
        lps.extend(self.tail_logprob);
        lps
    }

    /// Keeps the `n` most probable entries, folding the rest into the tail.
    pub fn truncated(&self, n: usize) -> Self {
        if n >= self.entries.len() {
            return self.clone();
        }
        let mut lps: Vec<f64> = self.entries[n..].iter().map(|e| e.1).collect();
        lps.extend(self.tail_logprob);
        Self {
            kind: DistributionKind::TopK,
            entries: self.entries[..n].to_vec(),
            tail_logprob: Some(stats::logsumexp(&lps)),
            context_position: self.context_position,
        }
    }

    pub(crate) fn with_position(mut self, position: usize) -> Self {
        self.context_position = position;
        self
    }
}

/// Identity and capabilities of a backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub backend_id: String,
    pub vocab_size: usize,
    pub bos_id: Option<TokenId>,
    pub supports_full_distribution: bool,
    pub max_context: usize,
    /// Number of scoring calls the instance accepts concurrently.
    #[serde(default = "one")]
    pub max_in_flight: usize,
}

fn one() -> usize {
    1
}

impl BackendDescriptor {
    pub fn validate(&self) -> Result<(), String> {
        if self.vocab_size == 0 {
            return Err("vocab_size must be positive".into());
        }
        if let Some(bos) = self.bos_id {
            if bos as usize >= self.vocab_size {
                return Err(format!("bos_id {bos} >= vocab_size {}", self.vocab_size));
            }
        }
        if self.max_context == 0 {
            return Err("max_context must be positive".into());
        }
        Ok(())
    }

    /// Tokens the context can hold for the document itself.
    pub fn document_capacity(&self) -> usize {
        self.max_context - usize::from(self.bos_id.is_some())
    }
}

/// Distributions for a scored sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSequence {
    /// One distribution per scored position, in position order.
    pub distributions: Vec<NextTokenDistribution>,
    /// Positions with no distribution (position 0 when there is no BOS).
    pub unscored: Vec<usize>,
}

/// A source of next-token distributions.
///
/// Implementations are `Sync` but a single instance only promises one
/// in-flight call unless its descriptor says otherwise.
pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    fn tokenize(&self, text: &str) -> Result<Tokenization, BackendError>;

    fn score_sequence(&self, tokens: &[TokenSpan]) -> Result<ScoredSequence, BackendError>;

    /// Argmax decoding of up to `n` tokens after `prefix`.
    fn greedy_continuation(&self, prefix: &[TokenId], n: usize) -> Result<Vec<TokenId>, BackendError>;

    /// Surface text of a vocabulary entry, when known.
    fn token_text(&self, id: TokenId) -> Option<String>;
}

/// Fails with the largest analyzable prefix when `spans` overflow the context.
pub fn check_capacity(descriptor: &BackendDescriptor, spans: &[TokenSpan]) -> Result<(), BackendError> {
    let capacity = descriptor.document_capacity();
    if spans.len() <= capacity {
        return Ok(());
    }
    Err(BackendError::ContextOverflow {
        tokens: spans.len(),
        max_context: descriptor.max_context,
        max_prefix_tokens: capacity,
        max_prefix_bytes: if capacity == 0 { 0 } else { spans[capacity - 1].byte_end },
    })
}

/// Display text for a token id, falling back to a placeholder.
pub fn display_text(backend: &dyn Backend, id: TokenId) -> String {
    backend.token_text(id).unwrap_or_else(|| format!("<{id}>"))
}

/// An alternative token and its probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alternative {
    pub id: TokenId,
    pub text: String,
    pub probability: f64,
}

/// The `k` most probable listed entries with probabilities.
pub fn top_alternatives(
    dist: &NextTokenDistribution,
    k: usize,
    text_of: impl Fn(TokenId) -> String,
) -> Vec<Alternative> {
    dist.entries()
        .iter()
        .take(k)
        .map(|&(id, lp)| Alternative {
            id,
            text: text_of(id),
            probability: lp.exp(),
        })
        .collect()
}

/// Greedy decoding driven by a per-step distribution function.
pub(crate) fn greedy_loop(
    prefix: &[TokenId],
    n: usize,
    mut next: impl FnMut(&[TokenId]) -> Result<Option<NextTokenDistribution>, BackendError>,
) -> Result<Vec<TokenId>, BackendError> {
    let mut context = prefix.to_vec();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let Some(dist) = next(&context)? else { break };
        let Some(id) = dist.argmax() else { break };
        out.push(id);
        context.push(id);
    }
    Ok(out)
}
