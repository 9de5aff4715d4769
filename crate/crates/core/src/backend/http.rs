//! Client for a remote endpoint returning top-k log-probabilities.
//!
//! Request: `POST {"tokens":[...],"top_k":k}`. Response:
//! `{"distributions":[{"entries":[[id,logprob],...],"tail_logprob":x|null},...]}`
//! with one distribution per request token, each predicting the token that
//! follows it.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    check_capacity, Backend, BackendDescriptor, BackendError, NextTokenDistribution,
    ScoredSequence, TokenId, TokenSpan, Tokenization, Vocab,
};

/// Base of the logarithms the remote endpoint emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum LogBase {
    #[default]
    #[serde(rename = "e")]
    Natural,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "10")]
    Ten,
}

impl LogBase {
    /// Factor converting a log in this base to nats.
    pub fn to_nats(self) -> f64 {
        match self {
            LogBase::Natural => 1.0,
            LogBase::Two => std::f64::consts::LN_2,
            LogBase::Ten => std::f64::consts::LN_10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub backend_id: String,
    pub url: String,
    pub top_k: usize,
    pub timeout: Duration,
    /// Header name and value sent with every request.
    pub auth_header: Option<(String, String)>,
    pub log_base: LogBase,
    pub bos_id: Option<TokenId>,
    pub max_context: usize,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    tokens: &'a [TokenId],
    top_k: usize,
}

#[derive(Deserialize)]
struct ScoreResponse {
    distributions: Vec<WireDistribution>,
}

#[derive(Deserialize)]
struct WireDistribution {
    entries: Vec<(TokenId, f64)>,
    tail_logprob: Option<f64>,
}

pub struct HttpBackend {
    config: HttpConfig,
    descriptor: BackendDescriptor,
    vocab: Vocab,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpConfig, vocab: Vocab) -> Result<Self, BackendError> {
        let descriptor = BackendDescriptor {
            backend_id: config.backend_id.clone(),
            vocab_size: vocab.len(),
            bos_id: config.bos_id,
            supports_full_distribution: false,
            max_context: config.max_context,
            max_in_flight: 1,
        };
        descriptor.validate().map_err(BackendError::Unavailable)?;
        if config.top_k == 0 {
            return Err(BackendError::Unavailable("top_k must be at least 1".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        Ok(Self {
            config,
            descriptor,
            vocab,
            client,
        })
    }

    fn request(&self, tokens: &[TokenId]) -> Result<Vec<WireDistribution>, BackendError> {
        let body = serde_json::to_vec(&ScoreRequest {
            tokens,
            top_k: self.config.top_k,
        })
        .expect("request serializes");
        let mut req = self
            .client
            .post(&self.config.url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body);
        if let Some((name, value)) = &self.config.auth_header {
            req = req.header(name.as_str(), value.as_str());
        }
        let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let bytes = resp.bytes().map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Transport(format!(
                "status {status}: {}",
                String::from_utf8_lossy(&bytes)
            )));
        }
        let parsed: ScoreResponse =
            serde_json::from_slice(&bytes).map_err(|e| BackendError::Transport(format!("bad response: {e}")))?;
        if parsed.distributions.len() != tokens.len() {
            return Err(BackendError::Transport(format!(
                "sent {} tokens, received {} distributions",
                tokens.len(),
                parsed.distributions.len()
            )));
        }
        Ok(parsed.distributions)
    }

    fn convert(&self, position: usize, wire: WireDistribution) -> Result<NextTokenDistribution, BackendError> {
        let f = self.config.log_base.to_nats();
        let entries = wire.entries.into_iter().map(|(id, lp)| (id, lp * f)).collect();
        let dist = NextTokenDistribution::top_k(position, entries, wire.tail_logprob.map(|t| t * f))?;
        if let Some(&(id, _)) = dist.entries().iter().find(|e| e.0 as usize >= self.descriptor.vocab_size) {
            return Err(BackendError::UnknownToken {
                id,
                vocab_size: self.descriptor.vocab_size,
            });
        }
        Ok(dist)
    }
}

impl Backend for HttpBackend {
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
        let mut request: Vec<TokenId> = self.config.bos_id.into_iter().collect();
        request.extend(tokens.iter().map(|t| t.id));
        let mut out = ScoredSequence {
            distributions: Vec::with_capacity(tokens.len()),
            unscored: Vec::new(),
        };
        if self.config.bos_id.is_none() {
            if tokens.is_empty() {
                return Ok(out);
            }
            out.unscored.push(0);
            if tokens.len() == 1 {
                return Ok(out);
            }
        }
        let wire = self.request(&request)?;
        // distribution i predicts request[i + 1]
        let first_position = usize::from(self.config.bos_id.is_none());
        for (i, w) in wire.into_iter().take(request.len() - 1).enumerate() {
            out.distributions.push(self.convert(first_position + i, w)?);
        }
        Ok(out)
    }

    fn greedy_continuation(&self, prefix: &[TokenId], n: usize) -> Result<Vec<TokenId>, BackendError> {
        if n == 0 {
            return Ok(Vec::new());
        }
        if prefix.is_empty() && self.config.bos_id.is_none() {
            return Err(BackendError::GenerationUnsupported(
                "empty prefix without a BOS token".into(),
            ));
        }
        super::greedy_loop(prefix, n, |context| {
            if context.len() >= self.descriptor.document_capacity() {
                return Ok(None);
            }
            let mut request: Vec<TokenId> = self.config.bos_id.into_iter().collect();
            request.extend_from_slice(context);
            let last = self.request(&request)?.pop().expect("non-empty request");
            self.convert(context.len(), last).map(Some)
        })
    }

    fn token_text(&self, id: TokenId) -> Option<String> {
        self.vocab.text(id).map(str::to_string)
    }
}
