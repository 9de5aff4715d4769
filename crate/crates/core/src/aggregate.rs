//! Views over a document analysis: surprisal ranking, missing tokens, and
//! sentence and paragraph aggregates.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, TokenId, TokenSpan};
use crate::error::AnalysisError;
use crate::expectancy::{DocumentAnalysis, Exactness};

const SENTENCE_TERMINATORS: [char; 3] = ['.', '!', '?'];
const CLOSING_PUNCTUATION: [char; 6] = ['"', '\'', ')', ']', '\u{201d}', '\u{2019}'];
const OPENING_PUNCTUATION: [char; 6] = ['"', '\'', '(', '[', '\u{201c}', '\u{2018}'];
/// Word-start markers used by sub-word vocabularies.
const WORD_MARKERS: [char; 3] = ['\u{0120}', '\u{2581}', '\u{010a}'];

pub fn default_abbreviations() -> Vec<String> {
    [
        "e.g.", "i.e.", "et al.", "Dr.", "Fig.", "Figs.", "cf.", "vs.", "etc.", "Eq.", "Sec.", "Ch.", "No.",
        "Vol.", "pp.", "p.", "ed.", "eds.", "Prof.", "Mr.", "Mrs.", "Ms.", "St.", "approx.", "resp.",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Sentence,
    Paragraph,
}

/// Byte and token extent of a segment. Token range is half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentExtent {
    pub byte_start: usize,
    pub byte_end: usize,
    pub token_start: usize,
    pub token_end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentStats {
    pub kind: SegmentKind,
    pub byte_start: usize,
    pub byte_end: usize,
    pub token_start: usize,
    pub token_end: usize,
    pub scored_count: usize,
    /// `None` when the segment has no scored token.
    pub mean_z: Option<f64>,
    pub max_z: Option<f64>,
    pub mean_surprisal_nats: Option<f64>,
    pub flagged_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedToken {
    pub position: usize,
    pub text: String,
    pub surprisal_nats: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingTokenEntry {
    pub text: String,
    pub cumulative_probability: f64,
    pub appearances_in_text: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingTokens {
    /// `TopKApprox` when any contributing distribution was truncated, making
    /// every cumulative probability a lower bound.
    pub exactness: Exactness,
    pub entries: Vec<MissingTokenEntry>,
}

/// All aggregate views of one analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Views {
    pub ranked: Vec<RankedToken>,
    /// Absent when the analysis kept no distributions.
    pub missing: Option<MissingTokens>,
    pub sentences: Vec<SegmentStats>,
    pub paragraphs: Vec<SegmentStats>,
}

impl Views {
    pub fn compute(analysis: &DocumentAnalysis, backend: &dyn Backend) -> Result<Self, AnalysisError> {
        let opts = &analysis.options;
        let sentences = segment_sentences(&analysis.source_text, &analysis.tokens, &opts.abbreviations);
        let paragraphs = segment_paragraphs(&analysis.source_text, &analysis.tokens);
        let missing = if opts.retain_dist == 0 {
            None
        } else {
            Some(missing_tokens(analysis, opts.missing_n, &Stoplist::default(), |id| {
                backend.token_text(id)
            })?)
        };
        Ok(Self {
            ranked: rank_by_surprisal(analysis, opts.rank_n),
            missing,
            sentences: aggregate_segments(analysis, &sentences, SegmentKind::Sentence),
            paragraphs: aggregate_segments(analysis, &paragraphs, SegmentKind::Paragraph),
        })
    }
}

/// Offset of the first non-whitespace byte of a token, or its start.
fn anchor(span: &TokenSpan) -> usize {
    span.byte_start
        + span
            .text
            .char_indices()
            .find(|(_, c)| !c.is_whitespace())
            .map_or(0, |(i, _)| i)
}

/// Groups tokens by the region between consecutive boundaries.
fn group_tokens(boundaries: &[usize], spans: &[TokenSpan]) -> Vec<SegmentExtent> {
    let mut out: Vec<SegmentExtent> = Vec::new();
    let mut current = None;
    for (i, span) in spans.iter().enumerate() {
        let seg = boundaries.partition_point(|&b| b <= anchor(span));
        match (current, out.last_mut()) {
            (Some(c), Some(last)) if c == seg => {
                last.byte_end = span.byte_end;
                last.token_end = i + 1;
            }
            _ => {
                out.push(SegmentExtent {
                    byte_start: span.byte_start,
                    byte_end: span.byte_end,
                    token_start: i,
                    token_end: i + 1,
                });
                current = Some(seg);
            }
        }
    }
    out
}

fn is_abbreviation(before: &str, abbreviations: &[String]) -> bool {
    abbreviations.iter().any(|a| {
        before.ends_with(a.as_str())
            && before[..before.len() - a.len()]
                .chars()
                .next_back()
                .is_none_or(|c| c.is_whitespace() || c == '(' || c == '[')
    })
}

/// Byte offsets where a new sentence begins.
pub fn sentence_boundaries(text: &str, abbreviations: &[String]) -> Vec<usize> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (at, c) = chars[i];
        i += 1;
        if !SENTENCE_TERMINATORS.contains(&c) {
            continue;
        }
        let mut j = i;
        while j < chars.len() && CLOSING_PUNCTUATION.contains(&chars[j].1) {
            j += 1;
        }
        let ws_start = j;
        while j < chars.len() && chars[j].1.is_whitespace() {
            j += 1;
        }
        let mut k = j;
        while k < chars.len() && OPENING_PUNCTUATION.contains(&chars[k].1) {
            k += 1;
        }
        if j == ws_start || k >= chars.len() {
            continue;
        }
        let next = chars[k].1;
        if !(next.is_uppercase() || next.is_ascii_digit()) {
            continue;
        }
        if c == '.' && is_abbreviation(&text[..at + 1], abbreviations) {
            continue;
        }
        out.push(chars[j].0);
        i = j;
    }
    out
}

/// Sentence extents over the tokens of `text`.
pub fn segment_sentences(text: &str, spans: &[TokenSpan], abbreviations: &[String]) -> Vec<SegmentExtent> {
    group_tokens(&sentence_boundaries(text, abbreviations), spans)
}

/// Byte offsets where a paragraph begins after a blank line.
pub fn paragraph_boundaries(text: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut run_start = None;
    let mut newlines = 0;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if run_start.is_none() {
                run_start = Some(i);
                newlines = 0;
            }
            if c == '\n' {
                newlines += 1;
            }
        } else {
            if run_start.is_some_and(|s| s > 0) && newlines >= 2 {
                out.push(i);
            }
            run_start = None;
        }
    }
    out
}

/// Paragraph extents; a single paragraph when there is no blank line.
pub fn segment_paragraphs(text: &str, spans: &[TokenSpan]) -> Vec<SegmentExtent> {
    group_tokens(&paragraph_boundaries(text), spans)
}

/// Per-segment statistics; unscored tokens are left out of every average.
pub fn aggregate_segments(
    analysis: &DocumentAnalysis,
    extents: &[SegmentExtent],
    kind: SegmentKind,
) -> Vec<SegmentStats> {
    extents
        .iter()
        .map(|e| {
            let scored: Vec<_> = (e.token_start..e.token_end)
                .filter_map(|p| analysis.stats_at(p))
                .collect();
            let n = scored.len();
            let (mean_z, max_z, mean_s, flagged) = if n == 0 {
                (None, None, None, None)
            } else {
                let nf = n as f64;
                (
                    Some(scored.iter().map(|s| s.z).sum::<f64>() / nf),
                    scored.iter().map(|s| s.z).reduce(f64::max),
                    Some(scored.iter().map(|s| s.surprisal_nats).sum::<f64>() / nf),
                    Some(scored.iter().filter(|s| s.flagged).count() as f64 / nf),
                )
            };
            SegmentStats {
                kind,
                byte_start: e.byte_start,
                byte_end: e.byte_end,
                token_start: e.token_start,
                token_end: e.token_end,
                scored_count: n,
                mean_z,
                max_z,
                mean_surprisal_nats: mean_s,
                flagged_fraction: flagged,
            }
        })
        .collect()
}

/// The `n` most surprising scored tokens, ties by position.
pub fn rank_by_surprisal(analysis: &DocumentAnalysis, n: usize) -> Vec<RankedToken> {
    let mut order: Vec<_> = analysis.stats.iter().collect();
    order.sort_by(|a, b| {
        b.surprisal_nats
            .total_cmp(&a.surprisal_nats)
            .then(a.position.cmp(&b.position))
    });
    order
        .into_iter()
        .take(n)
        .map(|s| RankedToken {
            position: s.position,
            text: analysis.tokens[s.position].text.clone(),
            surprisal_nats: s.surprisal_nats,
            z: s.z,
        })
        .collect()
}

/// Token forms left out of the missing-token view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stoplist {
    pub whitespace: bool,
    pub punctuation: bool,
    /// Normalized forms to drop.
    pub words: BTreeSet<String>,
}

impl Default for Stoplist {
    fn default() -> Self {
        Self {
            whitespace: true,
            punctuation: true,
            words: BTreeSet::new(),
        }
    }
}

impl Stoplist {
    pub fn none() -> Self {
        Self {
            whitespace: false,
            punctuation: false,
            words: BTreeSet::new(),
        }
    }

    fn excludes(&self, form: &str) -> bool {
        if form.is_empty() {
            return self.whitespace;
        }
        if self.punctuation && !form.chars().any(char::is_alphanumeric) {
            return true;
        }
        self.words.contains(form)
    }
}

/// Lowercased surface form without leading whitespace or word markers.
pub fn normalize_form(token_text: &str) -> String {
    token_text
        .trim_start_matches(|c: char| c.is_whitespace() || WORD_MARKERS.contains(&c))
        .to_lowercase()
}

/// Vocabulary tokens ranked by probability mass summed over scored
/// positions, excluding any whose form occurs in the document.
pub fn missing_tokens(
    analysis: &DocumentAnalysis,
    n: usize,
    stoplist: &Stoplist,
    text_of: impl Fn(TokenId) -> Option<String>,
) -> Result<MissingTokens, AnalysisError> {
    let retained: Vec<_> = analysis.retained.iter().flatten().collect();
    if retained.len() < analysis.stats.len() {
        return Err(AnalysisError::DistributionsNotRetained);
    }
    let mut present: HashMap<String, usize> = HashMap::new();
    for t in &analysis.tokens {
        *present.entry(normalize_form(&t.text)).or_default() += 1;
    }
    for word in analysis
        .source_text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
    {
        present.entry(word.to_lowercase()).or_default();
    }
    let mut mass: HashMap<TokenId, f64> = HashMap::new();
    let mut exactness = Exactness::Exact;
    for d in &retained {
        exactness = exactness.and(Exactness::of(d));
        for &(id, lp) in d.entries() {
            *mass.entry(id).or_default() += lp.exp();
        }
    }
    let mut by_form: BTreeMap<String, f64> = BTreeMap::new();
    let mut ids: Vec<_> = mass.into_iter().collect();
    ids.sort_by_key(|e| e.0);
    for (id, p) in ids {
        let Some(text) = text_of(id) else { continue };
        let form = normalize_form(&text);
        if stoplist.excludes(&form) || present.contains_key(&form) {
            continue;
        }
        *by_form.entry(form).or_default() += p;
    }
    let mut entries: Vec<MissingTokenEntry> = by_form
        .into_iter()
        .map(|(text, p)| MissingTokenEntry {
            text,
            cumulative_probability: p,
            appearances_in_text: 0,
        })
        .collect();
    entries.sort_by(|a, b| {
        b.cumulative_probability
            .total_cmp(&a.cumulative_probability)
            .then_with(|| a.text.cmp(&b.text))
    });
    entries.truncate(n);
    Ok(MissingTokens { exactness, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spans_for(text: &str) -> Vec<TokenSpan> {
        crate::backend::Vocab::from_corpus(&[], [text])
            .unwrap()
            .tokenize(text)
            .unwrap()
            .spans
    }

    fn sentence_count(text: &str) -> usize {
        segment_sentences(text, &spans_for(text), &default_abbreviations()).len()
    }

    #[test]
    fn sentence_rules() {
        assert_eq!(sentence_count("A. B."), 2);
        assert_eq!(sentence_count("Dr. Smith came."), 1);
        assert_eq!(sentence_count("no terminator here"), 1);
        assert_eq!(sentence_count("As Smith et al. Showed it. Then 3 more!"), 2);
        assert_eq!(sentence_count("Is it? Yes! \"Quoted.\" Next"), 4);
        assert_eq!(sentence_count("values like 3.5 stay. lowercase does not split"), 1);
    }

    #[test]
    fn paragraph_rules() {
        let count = |t: &str| segment_paragraphs(t, &spans_for(t)).len();
        assert_eq!(count("p1\n\np2"), 2);
        assert_eq!(count("p1\np1"), 1);
        assert_eq!(count("\n\n\np1\n\np2\n\n\n"), 2);
        assert_eq!(count("a\n \n b\r\n\r\nc"), 3);
    }

    #[test]
    fn extents_are_contiguous_and_cover_tokens() {
        let text = "First one. Second one!\n\nThird, here. Fourth";
        let spans = spans_for(text);
        for ext in [
            segment_sentences(text, &spans, &default_abbreviations()),
            segment_paragraphs(text, &spans),
        ] {
            assert_eq!(ext.first().unwrap().token_start, 0);
            assert_eq!(ext.last().unwrap().token_end, spans.len());
            for w in ext.windows(2) {
                assert_eq!(w[0].token_end, w[1].token_start);
            }
        }
    }

    #[test]
    fn normalized_forms() {
        assert_eq!(normalize_form(" Section"), "section");
        assert_eq!(normalize_form("\u{0120}Safety"), "safety");
        assert_eq!(normalize_form("  "), "");
        assert!(Stoplist::default().excludes(""));
        assert!(Stoplist::default().excludes(",;"));
        assert!(!Stoplist::default().excludes("x1"));
    }
}
