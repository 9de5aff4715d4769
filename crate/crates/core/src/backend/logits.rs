use super::{
    check_capacity, Backend, BackendDescriptor, BackendError, NextTokenDistribution,
    ScoredSequence, TokenId, TokenSpan, Tokenization, Vocab,
};

/// A local causal model producing raw next-token logits.
pub trait LogitsModel: Send + Sync {
    /// Logits over the whole vocabulary for the token after `context`.
    fn next_logits(&self, context: &[TokenId]) -> Result<Vec<f64>, BackendError>;
}

/// Adapts a [`LogitsModel`] into a backend with full distributions.
pub struct LogitsBackend<M> {
    descriptor: BackendDescriptor,
    vocab: Vocab,
    model: M,
}

impl<M: LogitsModel> LogitsBackend<M> {
    pub fn new(
        backend_id: impl Into<String>,
        vocab: Vocab,
        bos_id: Option<TokenId>,
        max_context: usize,
        model: M,
    ) -> Result<Self, BackendError> {
        let descriptor = BackendDescriptor {
            backend_id: backend_id.into(),
            vocab_size: vocab.len(),
            bos_id,
            supports_full_distribution: true,
            max_context,
            max_in_flight: 1,
        };
        descriptor.validate().map_err(BackendError::Unavailable)?;
        Ok(Self {
            descriptor,
            vocab,
            model,
        })
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn distribution(&self, context: &[TokenId], position: usize) -> Result<NextTokenDistribution, BackendError> {
        let logits = self.model.next_logits(context)?;
        if logits.len() != self.descriptor.vocab_size {
            return Err(BackendError::InvalidDistribution(format!(
                "model returned {} logits for a vocabulary of {}",
                logits.len(),
                self.descriptor.vocab_size
            )));
        }
        NextTokenDistribution::from_logits(position, &logits)
    }
}

impl<M: LogitsModel> Backend for LogitsBackend<M> {
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
                out.distributions.push(self.distribution(&context, pos)?);
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
            if context.len() >= self.descriptor.document_capacity() {
                return Ok(None);
            }
            let full: Vec<TokenId> = bos.iter().chain(context).copied().collect();
            self.distribution(&full, context.len()).map(Some)
        })
    }

    fn token_text(&self, id: TokenId) -> Option<String> {
        self.vocab.text(id).map(str::to_string)
    }
}
