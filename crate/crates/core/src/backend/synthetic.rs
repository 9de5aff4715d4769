use std::sync::Arc;

use super::{
    check_capacity, Backend, BackendDescriptor, BackendError, NextTokenDistribution,
    ScoredSequence, TokenId, TokenSpan, Tokenization, Vocab,
};

type DistFn = dyn Fn(&[TokenId], Option<TokenId>, usize) -> Result<NextTokenDistribution, BackendError>
    + Send
    + Sync;

/// A programmable backend for fixtures and harness checks.
///
/// The closure receives the context (including BOS when configured), the
/// token that actually follows when scoring a known sequence (`None` during
/// generation), and the position being predicted. Being able to see the
/// actual token is what lets oracle and constant-likelihood fixtures exist;
/// no real model works this way.
#[derive(Clone)]
pub struct SyntheticBackend {
    descriptor: BackendDescriptor,
    vocab: Vocab,
    dist: Arc<DistFn>,
}

impl SyntheticBackend {
    pub fn new(
        backend_id: impl Into<String>,
        vocab: Vocab,
        bos_id: Option<TokenId>,
        dist: impl Fn(&[TokenId], Option<TokenId>, usize) -> Result<NextTokenDistribution, BackendError>
            + Send
            + Sync
            + 'static,
    ) -> Self {
        Self {
            descriptor: BackendDescriptor {
                backend_id: backend_id.into(),
                vocab_size: vocab.len(),
                bos_id,
                supports_full_distribution: true,
                max_context: 1 << 16,
                max_in_flight: usize::MAX,
            },
            vocab,
            dist: Arc::new(dist),
        }
    }

    pub fn with_max_context(mut self, max_context: usize) -> Self {
        self.descriptor.max_context = max_context;
        self
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }
}

impl Backend for SyntheticBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn tokenize(&self, text: &str) -> Result<Tokenization, BackendError> {
        let t = self.vocab.tokenize(text)?;
        check_capacity(&self.descriptor, &t.spans)?;
        Ok(t)
    }

    fn score_sequence(&self, tokens: &[TokenSpan]) -> Result<ScoredSequence, BackendError> {
        check_capacity(&self.descriptor, tokens)?;
        let mut context: Vec<TokenId> = self.descriptor.bos_id.into_iter().collect();
        let mut out = ScoredSequence {
            distributions: Vec::with_capacity(tokens.len()),
            unscored: Vec::new(),
        };
        for (pos, tok) in tokens.iter().enumerate() {
            if context.is_empty() {
                out.unscored.push(pos);
            } else {
                let d = (self.dist)(&context, Some(tok.id), pos)?.with_position(pos);
                out.distributions.push(d);
            }
            context.push(tok.id);
        }
        Ok(out)
    }

    fn greedy_continuation(&self, prefix: &[TokenId], n: usize) -> Result<Vec<TokenId>, BackendError> {
        let bos: Vec<TokenId> = self.descriptor.bos_id.into_iter().collect();
        if n > 0 && prefix.is_empty() && bos.is_empty() {
            return Err(BackendError::GenerationUnsupported(
                "empty prefix without a BOS token".into(),
            ));
        }
        super::greedy_loop(prefix, n, |context| {
            let full: Vec<TokenId> = bos.iter().chain(context).copied().collect();
            (self.dist)(&full, None, context.len()).map(|d| Some(d.with_position(context.len())))
        })
    }

    fn token_text(&self, id: TokenId) -> Option<String> {
        self.vocab.text(id).map(str::to_string)
    }
}
