//! Recorded tokenizations and distributions replayed as a backend.
//!
//! Fixture files are line-delimited JSON: a header object followed by one
//! token object per token. A further header line in the same file starts a
//! new document.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    check_capacity, Backend, BackendDescriptor, BackendError, DistributionKind,
    NextTokenDistribution, ScoredSequence, TokenId, TokenSpan, Tokenization,
};

const DEFAULT_MAX_CONTEXT: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayHeader {
    pub backend_id: String,
    pub vocab_size: usize,
    pub bos_id: Option<TokenId>,
    pub tokenizer: String,
    /// Surface texts for ids that appear only as alternatives.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vocab: Vec<(TokenId, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_context: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum FixtureLine {
    Header(ReplayHeader),
    Token(TokenLine),
}

#[derive(Debug, Deserialize)]
struct TokenLine {
    id: TokenId,
    text: String,
    byte_start: usize,
    byte_end: usize,
    dist: Option<DistLine>,
}

#[derive(Debug, Deserialize)]
struct DistLine {
    kind: DistributionKind,
    entries: Vec<(TokenId, f64)>,
    tail_logprob: Option<f64>,
}

/// One recorded document.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayDocument {
    pub header: ReplayHeader,
    pub spans: Vec<TokenSpan>,
    /// Distribution predicting each token; `None` only for an unscored
    /// first token.
    pub distributions: Vec<Option<NextTokenDistribution>>,
}

impl ReplayDocument {
    pub fn text(&self) -> String {
        super::detokenize(&self.spans)
    }

    fn ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.spans.iter().map(|s| s.id)
    }

    /// Scores `text` with `backend` and captures the result.
    pub fn record(backend: &dyn Backend, text: &str, tokenizer: &str) -> Result<Self, BackendError> {
        let desc = backend.descriptor();
        let tokenization = backend.tokenize(text)?;
        let scored = backend.score_sequence(&tokenization.spans)?;
        let mut distributions: Vec<Option<NextTokenDistribution>> = vec![None; tokenization.spans.len()];
        for d in scored.distributions {
            let pos = d.context_position();
            distributions[pos] = Some(d);
        }
        let mut vocab = BTreeMap::new();
        for d in distributions.iter().flatten() {
            for &(id, _) in d.entries() {
                if let Some(t) = backend.token_text(id) {
                    vocab.insert(id, t);
                }
            }
        }
        for s in &tokenization.spans {
            vocab.remove(&s.id);
        }
        Ok(Self {
            header: ReplayHeader {
                backend_id: desc.backend_id.clone(),
                vocab_size: desc.vocab_size,
                bos_id: desc.bos_id,
                tokenizer: tokenizer.to_string(),
                vocab: vocab.into_iter().collect(),
                max_context: Some(desc.max_context),
            },
            spans: tokenization.spans,
            distributions,
        })
    }

    /// Serializes in fixture form with 17 significant digits per float.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = serde_json::to_value(&self.header).expect("header serializes");
        let mut ordered = serde_json::Map::new();
        ordered.insert("type".into(), "header".into());
        ordered.extend(header.as_object().expect("header is an object").clone());
        out.push_str(&serde_json::Value::Object(ordered).to_string());
        out.push('\n');
        for (span, dist) in self.spans.iter().zip(&self.distributions) {
            let text = serde_json::to_string(&span.text).expect("string serializes");
            let _ = write!(
                out,
                r#"{{"type":"token","id":{},"text":{},"byte_start":{},"byte_end":{},"dist":"#,
                span.id, text, span.byte_start, span.byte_end
            );
            match dist {
                None => out.push_str("null"),
                Some(d) => {
                    let kind = match d.kind() {
                        DistributionKind::Full => "full",
                        DistributionKind::TopK => "topk",
                    };
                    let _ = write!(out, r#"{{"kind":"{kind}","entries":["#);
                    let mut first = true;
                    for &(id, lp) in d.entries().iter().filter(|e| e.1.is_finite()) {
                        if !first {
                            out.push(',');
                        }
                        first = false;
                        let _ = write!(out, "[{id},{}]", fixture_float(lp));
                    }
                    out.push_str(r#"],"tail_logprob":"#);
                    match d.tail_logprob().filter(|t| t.is_finite()) {
                        Some(t) => out.push_str(&fixture_float(t)),
                        None => out.push_str("null"),
                    }
                    out.push('}');
                }
            }
            out.push_str("}\n");
        }
        out
    }
}

fn fixture_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Parses every document in a fixture file's contents.
pub fn parse_fixture(raw: &str) -> Result<Vec<ReplayDocument>, BackendError> {
    let mut docs: Vec<ReplayDocument> = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: FixtureLine = serde_json::from_str(line).map_err(|e| BackendError::FixtureParse {
            line: line_no,
            message: e.to_string(),
        })?;
        let err = |message: String| BackendError::FixtureParse { line: line_no, message };
        match parsed {
            FixtureLine::Header(header) => {
                if header.vocab_size == 0 {
                    return Err(err("vocab_size must be positive".into()));
                }
                docs.push(ReplayDocument {
                    header,
                    spans: Vec::new(),
                    distributions: Vec::new(),
                });
            }
            FixtureLine::Token(tok) => {
                let Some(doc) = docs.last_mut() else {
                    return Err(err("token line before header".into()));
                };
                let position = doc.spans.len();
                let expected_start = doc.spans.last().map_or(0, |s| s.byte_end);
                if tok.byte_start != expected_start || tok.byte_end != tok.byte_start + tok.text.len() {
                    return Err(err(format!(
                        "token {position} spans {}..{} but its text needs {}..{}",
                        tok.byte_start,
                        tok.byte_end,
                        expected_start,
                        expected_start + tok.text.len()
                    )));
                }
                if tok.id as usize >= doc.header.vocab_size {
                    return Err(err(format!("token id {} >= vocab_size", tok.id)));
                }
                let dist = match tok.dist {
                    None if position == 0 && doc.header.bos_id.is_none() => None,
                    None => return Err(err(format!("token {position} has no distribution"))),
                    Some(d) => {
                        let built = match d.kind {
                            DistributionKind::Full => NextTokenDistribution::full(position, d.entries),
                            DistributionKind::TopK => {
                                NextTokenDistribution::top_k(position, d.entries, d.tail_logprob)
                            }
                        }
                        .map_err(|e| err(e.to_string()))?;
                        if built.entries().iter().any(|e| e.0 as usize >= doc.header.vocab_size) {
                            return Err(err("distribution id >= vocab_size".into()));
                        }
                        Some(built)
                    }
                };
                doc.spans.push(TokenSpan {
                    id: tok.id,
                    text: tok.text,
                    byte_start: tok.byte_start,
                    byte_end: tok.byte_end,
                });
                doc.distributions.push(dist);
            }
        }
    }
    Ok(docs)
}

/// Replays recorded documents.
///
/// Only recorded texts can be tokenized and only recorded token paths can be
/// scored or continued.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    descriptor: BackendDescriptor,
    documents: Vec<ReplayDocument>,
    vocab: BTreeMap<TokenId, String>,
}

impl ReplayBackend {
    pub fn new(documents: Vec<ReplayDocument>) -> Result<Self, BackendError> {
        let first = documents
            .first()
            .ok_or_else(|| BackendError::FixtureMismatch("no documents recorded".into()))?;
        let h = &first.header;
        for d in &documents[1..] {
            let o = &d.header;
            if o.backend_id != h.backend_id || o.vocab_size != h.vocab_size || o.bos_id != h.bos_id {
                return Err(BackendError::FixtureMismatch(format!(
                    "document headers disagree: {:?} vs {:?}",
                    o.backend_id, h.backend_id
                )));
            }
        }
        let longest = documents.iter().map(|d| d.spans.len()).max().unwrap_or(0) + usize::from(h.bos_id.is_some());
        let max_context = documents
            .iter()
            .filter_map(|d| d.header.max_context)
            .min()
            .unwrap_or(DEFAULT_MAX_CONTEXT.max(longest));
        let descriptor = BackendDescriptor {
            backend_id: h.backend_id.clone(),
            vocab_size: h.vocab_size,
            bos_id: h.bos_id,
            supports_full_distribution: documents
                .iter()
                .flat_map(|d| d.distributions.iter().flatten())
                .all(|d| d.is_exact()),
            max_context,
            max_in_flight: usize::MAX,
        };
        descriptor.validate().map_err(BackendError::FixtureMismatch)?;
        let mut vocab = BTreeMap::new();
        for d in &documents {
            for (id, t) in &d.header.vocab {
                vocab.insert(*id, t.clone());
            }
            for s in &d.spans {
                vocab.insert(s.id, s.text.clone());
            }
        }
        Ok(Self {
            descriptor,
            documents,
            vocab,
        })
    }

    /// Loads a fixture file, or every `*.jsonl` file in a directory in name
    /// order.
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let mut files = Vec::new();
        if path.is_dir() {
            for entry in std::fs::read_dir(path)? {
                let p = entry?.path();
                if p.extension().is_some_and(|e| e == "jsonl") {
                    files.push(p);
                }
            }
            files.sort();
        } else {
            files.push(path.to_path_buf());
        }
        let mut docs = Vec::new();
        for f in files {
            let raw = std::fs::read_to_string(&f)?;
            docs.extend(parse_fixture(&raw).map_err(|e| match e {
                BackendError::FixtureParse { line, message } => BackendError::FixtureParse {
                    line,
                    message: format!("{}: {message}", f.display()),
                },
                other => other,
            })?);
        }
        Self::new(docs)
    }

    pub fn documents(&self) -> &[ReplayDocument] {
        &self.documents
    }

    fn find_path(&self, ids: &[TokenId]) -> Option<&ReplayDocument> {
        self.documents
            .iter()
            .find(|d| d.spans.len() >= ids.len() && d.ids().zip(ids).all(|(a, &b)| a == b))
    }
}

impl Backend for ReplayBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn tokenize(&self, text: &str) -> Result<Tokenization, BackendError> {
        if text.is_empty() {
            return Ok(Tokenization {
                spans: Vec::new(),
                normalized: false,
            });
        }
        let doc = self
            .documents
            .iter()
            .find(|d| d.text() == text)
            .ok_or_else(|| BackendError::FixtureMismatch(format!("no recorded document matches text of {} bytes", text.len())))?;
        check_capacity(&self.descriptor, &doc.spans)?;
        Ok(Tokenization {
            spans: doc.spans.clone(),
            normalized: false,
        })
    }

    fn score_sequence(&self, tokens: &[TokenSpan]) -> Result<ScoredSequence, BackendError> {
        check_capacity(&self.descriptor, tokens)?;
        let ids: Vec<TokenId> = tokens.iter().map(|t| t.id).collect();
        let doc = self
            .find_path(&ids)
            .ok_or_else(|| BackendError::FixtureMismatch("token sequence not on any recorded path".into()))?;
        let mut out = ScoredSequence {
            distributions: Vec::with_capacity(ids.len()),
            unscored: Vec::new(),
        };
        for (pos, d) in doc.distributions[..ids.len()].iter().enumerate() {
            match d {
                Some(d) => out.distributions.push(d.clone()),
                None => out.unscored.push(pos),
            }
        }
        Ok(out)
    }

    fn greedy_continuation(&self, prefix: &[TokenId], n: usize) -> Result<Vec<TokenId>, BackendError> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut step = 0;
        super::greedy_loop(prefix, n, |context| {
            let next = self.find_path(context).and_then(|d| d.distributions.get(context.len()).cloned().flatten());
            if next.is_none() && step == 0 {
                return Err(BackendError::GenerationUnsupported(
                    "replay generation only follows recorded paths".into(),
                ));
            }
            step += 1;
            Ok(next)
        })
    }

    fn token_text(&self, id: TokenId) -> Option<String> {
        self.vocab.get(&id).cloned()
    }
}
