//! Evaluation harness: two-candidate cloze scoring with raw and
//! prior-corrected accuracy, and per-group log-perplexity comparison
//! between two backends.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use num_rational::Ratio;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError};
use crate::error::AnalysisError;
use crate::expectancy::surprisal;

pub const HARNESS_VERSION: &str = concat!("mirror-bench/", env!("CARGO_PKG_VERSION"));

/// z-value of a two-sided 95% normal interval.
pub const Z_95: f64 = 1.96;

/// A two-way fill-in-the-blank item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClozeItem {
    pub text_before: String,
    pub text_after: String,
    pub candidates: [String; 2],
    pub answer_index: usize,
    pub field: String,
    pub source_id: String,
}

impl ClozeItem {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let bad = |reason: &str| {
            Err(AnalysisError::InvalidItem {
                source_id: self.source_id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.answer_index > 1 {
            return bad("answer_index must be 0 or 1");
        }
        if self.candidates[0] == self.candidates[1] {
            return bad("candidates must differ");
        }
        if self.candidates.iter().any(String::is_empty) {
            return bad("candidate is empty");
        }
        Ok(())
    }

    pub fn gold(&self) -> &str {
        &self.candidates[self.answer_index]
    }

    /// The item with its candidates in the other order.
    pub fn swapped(&self) -> Self {
        let mut s = self.clone();
        s.candidates.swap(0, 1);
        s.answer_index = 1 - self.answer_index;
        s
    }
}

/// Reads line-delimited cloze items.
pub fn load_items(path: &Path) -> Result<Vec<ClozeItem>, AnalysisError> {
    let raw = std::fs::read_to_string(path).map_err(BackendError::from)?;
    parse_items(&raw)
}

pub fn parse_items(raw: &str) -> Result<Vec<ClozeItem>, AnalysisError> {
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let item: ClozeItem = serde_json::from_str(l).map_err(|e| {
                AnalysisError::Backend(BackendError::FixtureParse {
                    line: i + 1,
                    message: e.to_string(),
                })
            })?;
            item.validate()?;
            Ok(item)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClozeScoring {
    /// Candidate tokens and every position after them.
    #[default]
    FullSequence,
    /// Candidate tokens only.
    SpanOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ClozeConfig {
    pub scoring: ClozeScoring,
    /// Divide each candidate's log-likelihood by its scored token count.
    pub per_token: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClozeScore {
    pub chosen_index: usize,
    pub log_likelihoods: [f64; 2],
    pub scored_tokens: [usize; 2],
    /// Equal scores; the first candidate is chosen.
    pub tie: bool,
}

fn candidate_log_likelihood(
    item: &ClozeItem,
    index: usize,
    backend: &dyn Backend,
    config: ClozeConfig,
) -> Result<(f64, usize), AnalysisError> {
    let candidate = &item.candidates[index];
    let text = format!("{}{}{}", item.text_before, candidate, item.text_after);
    let insert_start = item.text_before.len();
    let insert_end = insert_start + candidate.len();
    let spans = backend.tokenize(&text)?.spans;
    let touched: Vec<usize> = spans
        .iter()
        .enumerate()
        .filter(|(_, s)| s.byte_start < insert_end && s.byte_end > insert_start)
        .map(|(i, _)| i)
        .collect();
    let (Some(&first), Some(&last)) = (touched.first(), touched.last()) else {
        return Err(AnalysisError::InvalidItem {
            source_id: item.source_id.clone(),
            reason: format!("candidate {candidate:?} covers no token"),
        });
    };
    let end = match config.scoring {
        ClozeScoring::FullSequence => spans.len(),
        ClozeScoring::SpanOnly => last + 1,
    };
    let scored = backend.score_sequence(&spans)?;
    let vocab_size = backend.descriptor().vocab_size;
    let mut total = 0.0;
    let mut count = 0;
    for d in &scored.distributions {
        let pos = d.context_position();
        if (first..end).contains(&pos) {
            total -= surprisal(d, spans[pos].id, vocab_size)?.nats;
            count += 1;
        }
    }
    if count == 0 {
        return Err(AnalysisError::InvalidItem {
            source_id: item.source_id.clone(),
            reason: format!("no scored position for candidate {candidate:?}"),
        });
    }
    if config.per_token {
        total /= count as f64;
    }
    Ok((total, count))
}

/// Scores both completed texts and picks the more likely candidate.
pub fn score_cloze_item(
    item: &ClozeItem,
    backend: &dyn Backend,
    config: ClozeConfig,
) -> Result<ClozeScore, AnalysisError> {
    item.validate()?;
    let (a, na) = candidate_log_likelihood(item, 0, backend, config)?;
    let (b, nb) = candidate_log_likelihood(item, 1, backend, config)?;
    Ok(ClozeScore {
        chosen_index: usize::from(b > a),
        log_likelihoods: [a, b],
        scored_tokens: [na, nb],
        tie: a == b,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClozeOutcome {
    pub source_id: String,
    pub field: String,
    pub candidates: [String; 2],
    pub gold: String,
    pub predicted: String,
    pub correct: bool,
    pub tie: bool,
    pub log_likelihoods: [f64; 2],
}

impl ClozeOutcome {
    pub fn new(item: &ClozeItem, score: &ClozeScore) -> Self {
        Self {
            source_id: item.source_id.clone(),
            field: item.field.clone(),
            candidates: item.candidates.clone(),
            gold: item.gold().to_string(),
            predicted: item.candidates[score.chosen_index].clone(),
            correct: score.chosen_index == item.answer_index,
            tie: score.tie,
            log_likelihoods: score.log_likelihoods,
        }
    }
}

fn ratio_to_f64(r: Ratio<u64>) -> f64 {
    r.to_f64().expect("ratio of u64 converts")
}

fn raw_ratio(outcomes: &[ClozeOutcome]) -> Result<Ratio<u64>, AnalysisError> {
    if outcomes.is_empty() {
        return Err(AnalysisError::NoOutcomes);
    }
    let correct = outcomes.iter().filter(|o| o.correct).count() as u64;
    Ok(Ratio::new(correct, outcomes.len() as u64))
}

/// Fraction of outcomes that are correct.
pub fn raw_accuracy(outcomes: &[ClozeOutcome]) -> Result<f64, AnalysisError> {
    raw_ratio(outcomes).map(ratio_to_f64)
}

fn balanced_ratio(outcomes: &[ClozeOutcome]) -> Result<Ratio<u64>, AnalysisError> {
    if outcomes.is_empty() {
        return Err(AnalysisError::NoOutcomes);
    }
    let mut per_class: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for o in outcomes {
        let e = per_class.entry(o.gold.as_str()).or_default();
        e.0 += u64::from(o.correct);
        e.1 += 1;
    }
    let sum = per_class
        .values()
        .fold(Ratio::from_integer(0), |acc, &(c, n)| acc + Ratio::new(c, n));
    Ok(sum / per_class.len() as u64)
}

/// Balanced accuracy: the unweighted mean of per-gold-class accuracies, so
/// always answering the majority class scores at chance.
pub fn prior_corrected_accuracy(outcomes: &[ClozeOutcome]) -> Result<f64, AnalysisError> {
    balanced_ratio(outcomes).map(ratio_to_f64)
}

/// Candidate words that never occur as a gold answer; they carry no class
/// accuracy and are left out of the prior correction.
pub fn empty_classes(outcomes: &[ClozeOutcome]) -> Vec<String> {
    let gold: BTreeSet<&str> = outcomes.iter().map(|o| o.gold.as_str()).collect();
    let all: BTreeSet<&str> = outcomes
        .iter()
        .flat_map(|o| o.candidates.iter().map(String::as_str))
        .collect();
    all.difference(&gold).map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub group: String,
    pub items: usize,
    pub correct: usize,
    pub raw_accuracy: f64,
    pub prior_corrected_accuracy: f64,
    /// Gold word to predicted word to count.
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
}

impl GroupAccuracy {
    pub fn compute(group: &str, outcomes: &[ClozeOutcome]) -> Result<Self, AnalysisError> {
        let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        for o in outcomes {
            *confusion
                .entry(o.gold.clone())
                .or_default()
                .entry(o.predicted.clone())
                .or_default() += 1;
        }
        Ok(Self {
            group: group.to_string(),
            items: outcomes.len(),
            correct: outcomes.iter().filter(|o| o.correct).count(),
            raw_accuracy: raw_accuracy(outcomes)?,
            prior_corrected_accuracy: prior_corrected_accuracy(outcomes)?,
            confusion,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub source_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub backend_id: String,
    pub harness_version: String,
    pub config: ClozeConfig,
    /// User-supplied training compute, for plotting only.
    pub flops: Option<f64>,
    pub overall: GroupAccuracy,
    pub fields: Vec<GroupAccuracy>,
    pub warnings: Vec<String>,
    pub failures: Vec<ItemFailure>,
    pub outcomes: Vec<ClozeOutcome>,
}

impl BenchReport {
    pub fn from_outcomes(
        backend_id: &str,
        config: ClozeConfig,
        outcomes: Vec<ClozeOutcome>,
        failures: Vec<ItemFailure>,
    ) -> Result<Self, AnalysisError> {
        let overall = GroupAccuracy::compute("overall", &outcomes)?;
        let mut by_field: BTreeMap<&str, Vec<ClozeOutcome>> = BTreeMap::new();
        for o in &outcomes {
            by_field.entry(o.field.as_str()).or_default().push(o.clone());
        }
        let fields = by_field
            .iter()
            .map(|(f, os)| GroupAccuracy::compute(f, os))
            .collect::<Result<Vec<_>, _>>()?;
        let mut warnings = Vec::new();
        for class in empty_classes(&outcomes) {
            log::warn!("candidate class {class:?} has no gold items; excluded from prior correction");
            warnings.push(format!("class {class:?} has no gold items and is excluded from prior correction"));
        }
        let ties = outcomes.iter().filter(|o| o.tie).count();
        if ties > 0 {
            warnings.push(format!("{ties} tied items resolved to the first candidate"));
        }
        Ok(Self {
            backend_id: backend_id.to_string(),
            harness_version: HARNESS_VERSION.to_string(),
            config,
            flops: None,
            overall,
            fields,
            warnings,
            failures,
            outcomes,
        })
    }
}

/// Scores every item, in parallel up to the backend's in-flight limit.
/// Items that fail are listed in the report rather than aborting the run.
pub fn run_cloze_bench(
    items: &[ClozeItem],
    backend: &dyn Backend,
    config: ClozeConfig,
) -> Result<BenchReport, AnalysisError> {
    let workers = backend
        .descriptor()
        .max_in_flight
        .min(std::thread::available_parallelism().map_or(1, |n| n.get()))
        .min(items.len())
        .max(1);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<ClozeScore, AnalysisError>>>> =
        Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = score_cloze_item(&items[i], backend, config);
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (item, r) in items.iter().zip(results.into_inner().expect("results lock")) {
        match r.expect("every item scored") {
            Ok(score) => outcomes.push(ClozeOutcome::new(item, &score)),
            Err(e) => failures.push(ItemFailure {
                source_id: item.source_id.clone(),
                error: e.to_string(),
            }),
        }
    }
    BenchReport::from_outcomes(&backend.descriptor().backend_id, config, outcomes, failures)
}

/// Text table of reports ranked by prior-corrected accuracy.
pub fn render_table(reports: &[BenchReport]) -> String {
    let mut order: Vec<&BenchReport> = reports.iter().collect();
    order.sort_by(|a, b| {
        b.overall
            .prior_corrected_accuracy
            .total_cmp(&a.overall.prior_corrected_accuracy)
            .then_with(|| a.backend_id.cmp(&b.backend_id))
    });
    let name_w = order.iter().map(|r| r.backend_id.len()).max().unwrap_or(0).max("Model".len());
    let mut out = format!(
        "{:<name_w$}  {:>5}  {:>12}  {:>15}  {:>10}\n",
        "Model", "Items", "Raw accuracy", "Prior corrected", "FLOPs"
    );
    for r in order {
        let flops = r.flops.map_or("-".to_string(), |f| format!("{f:.2e}"));
        out.push_str(&format!(
            "{:<name_w$}  {:>5}  {:>11.1}%  {:>14.1}%  {:>10}\n",
            r.backend_id,
            r.overall.items,
            r.overall.raw_accuracy * 100.0,
            r.overall.prior_corrected_accuracy * 100.0,
            flops
        ));
    }
    out
}

/// A document of the perplexity corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusDocument {
    pub path: PathBuf,
    pub group: String,
    pub text: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLine {
    path: PathBuf,
    group: String,
}

/// Reads a manifest of `{"path","group"}` lines; paths resolve against
/// `corpus_dir`.
pub fn load_corpus(corpus_dir: &Path, manifest: &Path) -> Result<Vec<CorpusDocument>, AnalysisError> {
    let raw = std::fs::read_to_string(manifest).map_err(BackendError::from)?;
    let mut docs = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let m: ManifestLine = serde_json::from_str(line).map_err(|e| {
            AnalysisError::Backend(BackendError::FixtureParse {
                line: i + 1,
                message: e.to_string(),
            })
        })?;
        let full = corpus_dir.join(&m.path);
        let text = std::fs::read_to_string(&full).map_err(|e| {
            AnalysisError::Backend(BackendError::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", full.display()),
            )))
        })?;
        docs.push(CorpusDocument {
            path: m.path,
            group: m.group,
            text,
        });
    }
    Ok(docs)
}

/// Mean per-token negative log-likelihood in nats over scored positions.
pub fn log_perplexity(text: &str, backend: &dyn Backend) -> Result<f64, AnalysisError> {
    let spans = backend.tokenize(text)?.spans;
    let scored = backend.score_sequence(&spans)?;
    let vocab_size = backend.descriptor().vocab_size;
    let nll = scored
        .distributions
        .iter()
        .map(|d| surprisal(d, spans[d.context_position()].id, vocab_size).map(|m| m.nats))
        .collect::<Result<Vec<_>, _>>()?;
    mean_nll(&nll)
}

/// Mean of per-token negative log-likelihoods.
pub fn mean_nll(nll: &[f64]) -> Result<f64, AnalysisError> {
    if nll.is_empty() {
        return Err(AnalysisError::NothingToCompare("no scored tokens".into()));
    }
    Ok(nll.iter().sum::<f64>() / nll.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityRow {
    pub group: String,
    pub n_docs: usize,
    /// Mean of `log_ppl(a) - log_ppl(b)`.
    pub mean_delta: f64,
    pub ci95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentDelta {
    pub path: PathBuf,
    pub group: String,
    pub log_ppl_a: f64,
    pub log_ppl_b: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedDocument {
    pub path: PathBuf,
    pub group: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityComparison {
    pub backend_a: String,
    pub backend_b: String,
    pub rows: Vec<PerplexityRow>,
    pub documents: Vec<DocumentDelta>,
    pub excluded: Vec<ExcludedDocument>,
}

/// Mean and 95% half-width `1.96 * s / sqrt(n)` with the sample standard
/// deviation; a single value has zero width.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, Z_95 * var.sqrt() / n.sqrt())
}

/// Per-group mean difference in log-perplexity between two backends.
pub fn perplexity_compare(
    corpus: &[CorpusDocument],
    backend_a: &dyn Backend,
    backend_b: &dyn Backend,
) -> PerplexityComparison {
    let mut documents = Vec::new();
    let mut excluded = Vec::new();
    for doc in corpus {
        let a = log_perplexity(&doc.text, backend_a);
        let b = log_perplexity(&doc.text, backend_b);
        match (a, b) {
            (Ok(a), Ok(b)) => documents.push(DocumentDelta {
                path: doc.path.clone(),
                group: doc.group.clone(),
                log_ppl_a: a,
                log_ppl_b: b,
                delta: a - b,
            }),
            (a, b) => {
                let reason = [("a", a.err()), ("b", b.err())]
                    .into_iter()
                    .filter_map(|(which, e)| e.map(|e| format!("backend {which}: {e}")))
                    .collect::<Vec<_>>()
                    .join("; ");
                excluded.push(ExcludedDocument {
                    path: doc.path.clone(),
                    group: doc.group.clone(),
                    reason,
                });
            }
        }
    }
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for d in &documents {
        groups.entry(d.group.as_str()).or_default().push(d.delta);
    }
    let rows = groups
        .into_iter()
        .map(|(g, deltas)| {
            let (mean, ci) = mean_ci95(&deltas);
            PerplexityRow {
                group: g.to_string(),
                n_docs: deltas.len(),
                mean_delta: mean,
                ci95: ci,
            }
        })
        .collect();
    PerplexityComparison {
        backend_a: backend_a.descriptor().backend_id.clone(),
        backend_b: backend_b.descriptor().backend_id.clone(),
        rows,
        documents,
        excluded,
    }
}

/// Text table of a comparison.
pub fn render_perplexity_table(cmp: &PerplexityComparison) -> String {
    let w = cmp.rows.iter().map(|r| r.group.len()).max().unwrap_or(0).max("Group".len());
    let mut out = format!(
        "Δ log-perplexity ({} − {})\n{:<w$}  {:>6}  {:>12}  {:>10}\n",
        cmp.backend_a, cmp.backend_b, "Group", "Docs", "Mean Δ", "±95% CI"
    );
    for r in &cmp.rows {
        out.push_str(&format!(
            "{:<w$}  {:>6}  {:>12.6}  {:>10.6}\n",
            r.group, r.n_docs, r.mean_delta, r.ci95
        ));
    }
    for e in &cmp.excluded {
        out.push_str(&format!("excluded {}: {}\n", e.path.display(), e.reason));
    }
    out
}
