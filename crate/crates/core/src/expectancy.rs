//! Per-token surprisal, entropy, surprisal spread and z-score, and the
//! whole-document analysis built from them.

use serde::{Deserialize, Serialize};

use crate::aggregate::{self, Views};
use crate::backend::{
    display_text, top_alternatives, Alternative, Backend, BackendDescriptor, BackendError,
    NextTokenDistribution, TokenId, TokenSpan,
};
use crate::error::AnalysisError;
use crate::stats;

/// Whether a statistic is exact or a bound derived from a truncated
/// distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exactness {
    Exact,
    TopKApprox,
}

impl Exactness {
    pub fn of(dist: &NextTokenDistribution) -> Self {
        if dist.is_exact() {
            Exactness::Exact
        } else {
            Exactness::TopKApprox
        }
    }

    pub fn and(self, other: Self) -> Self {
        if self == Exactness::Exact && other == Exactness::Exact {
            Exactness::Exact
        } else {
            Exactness::TopKApprox
        }
    }
}

/// A value in nats with its exactness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measured {
    pub nats: f64,
    pub exactness: Exactness,
}

/// `-ln p(actual)`. An unlisted token under top-k gets the tail as a lower
/// bound.
pub fn surprisal(dist: &NextTokenDistribution, actual: TokenId, vocab_size: usize) -> Result<Measured, AnalysisError> {
    if actual as usize >= vocab_size {
        return Err(BackendError::UnknownToken { id: actual, vocab_size }.into());
    }
    let (lp, exactness) = match dist.logprob_of(actual) {
        Some(lp) => (lp, Exactness::of(dist)),
        None => match dist.tail_logprob() {
            Some(tail) => (tail, Exactness::TopKApprox),
            None => (f64::NEG_INFINITY, Exactness::Exact),
        },
    };
    if !lp.is_finite() {
        return Err(AnalysisError::ZeroProbability {
            position: dist.context_position(),
            id: actual,
        });
    }
    Ok(Measured {
        nats: stats::surprisal(lp).max(0.0),
        exactness,
    })
}

/// Entropy; the unlisted tail counts as one event.
pub fn entropy(dist: &NextTokenDistribution) -> Measured {
    Measured {
        nats: stats::entropy(&dist.support_logprobs()),
        exactness: Exactness::of(dist),
    }
}

/// Standard deviation of surprisal, centered form.
pub fn surprisal_std(dist: &NextTokenDistribution) -> Measured {
    Measured {
        nats: stats::surprisal_std(&dist.support_logprobs()),
        exactness: Exactness::of(dist),
    }
}

pub use crate::stats::zscore;

/// Statistics for one scored token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenStats {
    pub position: usize,
    pub surprisal_nats: f64,
    pub entropy_nats: f64,
    pub sigma_nats: f64,
    pub z: f64,
    /// 1 = most probable; `None` when the token is outside a truncated list.
    pub actual_rank: Option<usize>,
    pub actual_probability: f64,
    pub alternatives: Vec<Alternative>,
    pub exactness: Exactness,
    pub flagged: bool,
}

impl TokenStats {
    pub fn compute(
        dist: &NextTokenDistribution,
        actual: TokenId,
        vocab_size: usize,
        top_k: usize,
        z_threshold: f64,
        text_of: impl Fn(TokenId) -> String,
    ) -> Result<Self, AnalysisError> {
        let s = surprisal(dist, actual, vocab_size)?;
        let m = stats::surprisal_moments(&dist.support_logprobs());
        let z = zscore(s.nats, m.entropy, m.sigma);
        Ok(Self {
            position: dist.context_position(),
            surprisal_nats: s.nats,
            entropy_nats: m.entropy,
            sigma_nats: m.sigma,
            z,
            actual_rank: dist.rank_of(actual),
            actual_probability: (-s.nats).exp(),
            alternatives: top_alternatives(dist, top_k, text_of),
            exactness: s.exactness.and(Exactness::of(dist)),
            flagged: z >= z_threshold,
        })
    }
}

pub const DEFAULT_TOP_K: usize = 10;
pub const DEFAULT_Z_THRESHOLD: f64 = 1.5;
pub const DEFAULT_RETAIN_DIST: usize = 50;
pub const DEFAULT_RANK_N: usize = 20;
pub const DEFAULT_MISSING_N: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisOptions {
    /// Alternatives kept per token.
    pub top_k: usize,
    pub z_threshold: f64,
    /// Entries retained per position for the missing-token view; 0 keeps
    /// statistics only.
    pub retain_dist: usize,
    pub rank_n: usize,
    pub missing_n: usize,
    pub abbreviations: Vec<String>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            z_threshold: DEFAULT_Z_THRESHOLD,
            retain_dist: DEFAULT_RETAIN_DIST,
            rank_n: DEFAULT_RANK_N,
            missing_n: DEFAULT_MISSING_N,
            abbreviations: aggregate::default_abbreviations(),
        }
    }
}

impl AnalysisOptions {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let bad = |m: &str| Err(AnalysisError::InvalidOptions(m.to_string()));
        if self.top_k == 0 {
            return bad("top_k must be at least 1");
        }
        if !self.z_threshold.is_finite() {
            return bad("z_threshold must be finite");
        }
        if self.rank_n == 0 {
            return bad("rank_n must be at least 1");
        }
        if self.missing_n == 0 {
            return bad("missing_n must be at least 1");
        }
        Ok(())
    }
}

pub const FORMAT_VERSION: u32 = 1;

/// The result of analyzing one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentAnalysis {
    pub format_version: u32,
    pub source_text: String,
    pub normalized: bool,
    pub backend: BackendDescriptor,
    pub options: AnalysisOptions,
    pub created_at: Option<String>,
    pub tokens: Vec<TokenSpan>,
    pub unscored_positions: Vec<usize>,
    pub stats: Vec<TokenStats>,
    pub views: Views,
    /// Truncated distributions by token position, kept in memory only.
    #[serde(skip)]
    pub retained: Vec<Option<NextTokenDistribution>>,
}

impl DocumentAnalysis {
    /// Statistics for a token position, if it was scored.
    pub fn stats_at(&self, position: usize) -> Option<&TokenStats> {
        self.stats
            .binary_search_by_key(&position, |s| s.position)
            .ok()
            .map(|i| &self.stats[i])
    }

    pub fn to_canonical_json(&self) -> String {
        crate::canonical::to_canonical_json(self)
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }
}

/// Tokenizes, scores and computes every view for `text`.
pub fn analyze_document(
    text: &str,
    backend: &dyn Backend,
    options: &AnalysisOptions,
) -> Result<DocumentAnalysis, AnalysisError> {
    options.validate()?;
    if text.trim().is_empty() {
        return Err(AnalysisError::EmptyDocument);
    }
    let desc = backend.descriptor().clone();
    let tokenization = backend.tokenize(text)?;
    let tokens = tokenization.spans;
    if tokens.is_empty() {
        return Err(AnalysisError::EmptyDocument);
    }
    let scored = backend.score_sequence(&tokens)?;
    if scored.distributions.len() + scored.unscored.len() != tokens.len() {
        return Err(AnalysisError::Backend(BackendError::FixtureMismatch(format!(
            "{} tokens but {} distributions and {} unscored positions",
            tokens.len(),
            scored.distributions.len(),
            scored.unscored.len()
        ))));
    }
    let text_of = |id: TokenId| display_text(backend, id);
    let mut stats = Vec::with_capacity(scored.distributions.len());
    let mut retained = vec![None; tokens.len()];
    for dist in &scored.distributions {
        let pos = dist.context_position();
        let tok = tokens.get(pos).ok_or_else(|| {
            AnalysisError::Backend(BackendError::FixtureMismatch(format!("distribution for position {pos} out of range")))
        })?;
        stats.push(TokenStats::compute(
            dist,
            tok.id,
            desc.vocab_size,
            options.top_k,
            options.z_threshold,
            text_of,
        )?);
        if options.retain_dist > 0 {
            retained[pos] = Some(dist.truncated(options.retain_dist));
        }
    }
    stats.sort_by_key(|s| s.position);
    let mut analysis = DocumentAnalysis {
        format_version: FORMAT_VERSION,
        source_text: text.to_string(),
        normalized: tokenization.normalized,
        backend: desc,
        options: options.clone(),
        created_at: None,
        tokens,
        unscored_positions: scored.unscored,
        stats,
        views: Views::default(),
        retained,
    };
    analysis.views = Views::compute(&analysis, backend)?;
    Ok(analysis)
}
