//! Verbatim-recall probe: does greedy decoding reproduce a text?

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, TokenId};
use crate::error::AnalysisError;

/// Default prefix length for free-running probes.
pub const DEFAULT_PREFIX_TOKENS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    TeacherForced,
    FreeRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorizationReport {
    pub mode: ProbeMode,
    pub backend_id: String,
    /// Token index each entry of `matches` refers to.
    pub positions: Vec<usize>,
    pub tokens: Vec<String>,
    pub matches: Vec<bool>,
    pub match_fraction: f64,
    pub longest_match_run: usize,
    /// Free-run only.
    pub prefix_len: Option<usize>,
    /// Free-run only: decoded ids, possibly shorter than the continuation.
    pub generated: Option<Vec<TokenId>>,
}

impl MemorizationReport {
    fn new(
        mode: ProbeMode,
        backend_id: String,
        positions: Vec<usize>,
        tokens: Vec<String>,
        matches: Vec<bool>,
    ) -> Result<Self, AnalysisError> {
        if matches.is_empty() {
            return Err(AnalysisError::NothingToCompare("no positions to compare".into()));
        }
        let hits = matches.iter().filter(|&&m| m).count();
        Ok(Self {
            mode,
            backend_id,
            positions,
            tokens,
            match_fraction: hits as f64 / matches.len() as f64,
            longest_match_run: longest_run(&matches),
            matches,
            prefix_len: None,
            generated: None,
        })
    }
}

/// Length of the longest run of `true`.
pub fn longest_run(matches: &[bool]) -> usize {
    matches
        .iter()
        .fold((0, 0), |(best, cur), &m| {
            let cur = if m { cur + 1 } else { 0 };
            (best.max(cur), cur)
        })
        .0
}

/// Marks each scored position whose argmax equals the actual token.
pub fn teacher_forced_overlay(text: &str, backend: &dyn Backend) -> Result<MemorizationReport, AnalysisError> {
    let spans = backend.tokenize(text)?.spans;
    let scored = backend.score_sequence(&spans)?;
    let mut positions = Vec::new();
    let mut tokens = Vec::new();
    let mut matches = Vec::new();
    for d in &scored.distributions {
        let pos = d.context_position();
        positions.push(pos);
        tokens.push(spans[pos].text.clone());
        matches.push(d.argmax() == Some(spans[pos].id));
    }
    MemorizationReport::new(
        ProbeMode::TeacherForced,
        backend.descriptor().backend_id.clone(),
        positions,
        tokens,
        matches,
    )
}

/// Decodes greedily from the first `prefix_tokens` tokens and compares the
/// output position by position with the original continuation.
pub fn freerun_match(
    text: &str,
    backend: &dyn Backend,
    prefix_tokens: usize,
) -> Result<MemorizationReport, AnalysisError> {
    let spans = backend.tokenize(text)?.spans;
    if prefix_tokens == 0 || prefix_tokens >= spans.len() {
        return Err(AnalysisError::NothingToCompare(format!(
            "prefix of {prefix_tokens} tokens needs 1 <= prefix < {}",
            spans.len()
        )));
    }
    let ids: Vec<TokenId> = spans.iter().map(|s| s.id).collect();
    let continuation = &ids[prefix_tokens..];
    let generated = backend.greedy_continuation(&ids[..prefix_tokens], continuation.len())?;
    let matches: Vec<bool> = continuation
        .iter()
        .enumerate()
        .map(|(i, &id)| generated.get(i) == Some(&id))
        .collect();
    let mut report = MemorizationReport::new(
        ProbeMode::FreeRun,
        backend.descriptor().backend_id.clone(),
        (prefix_tokens..spans.len()).collect(),
        spans[prefix_tokens..].iter().map(|s| s.text.clone()).collect(),
        matches,
    )?;
    report.prefix_len = Some(prefix_tokens);
    report.generated = Some(generated);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runs() {
        assert_eq!(longest_run(&[true, true, false, true, false]), 2);
        assert_eq!(longest_run(&[false, false]), 0);
        assert_eq!(longest_run(&[true; 4]), 4);
        assert_eq!(longest_run(&[]), 0);
    }
}
