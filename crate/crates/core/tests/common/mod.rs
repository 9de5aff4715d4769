//! Shared helpers for the integration tests: an extended-precision reference
//! evaluator, fixture locations and small programmable backends.

#![allow(dead_code)]

use std::path::PathBuf;

use mirror_core::backend::{BackendError, NextTokenDistribution, ReplayBackend, SyntheticBackend, Vocab};
use mirror_core::bench::ClozeItem;
use mirror_core::aggregate::SegmentStats;
use mirror_core::{DocumentAnalysis, TokenId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod dd;
pub mod stub_lm;

pub const FIXTURES: [&str; 3] = ["fact", "locations", "discussion"];

/// The core crate's `tests` directory, also when this module is shared
/// with sibling crates.
pub fn tests_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests")
}

pub fn fixture_path(name: &str) -> PathBuf {
    tests_dir().join(format!("fixtures/replay/{name}.jsonl"))
}

pub fn golden_path(name: &str) -> PathBuf {
    tests_dir().join(format!("golden/{name}.json"))
}

pub fn handmade_path(name: &str) -> PathBuf {
    tests_dir().join(format!("fixtures/handmade/{name}"))
}

/// Backend and recorded text of a bundled fixture.
pub fn fixture(name: &str) -> (ReplayBackend, String) {
    let backend = ReplayBackend::load(&fixture_path(name)).expect("fixture loads");
    let text = backend.documents()[0].text();
    (backend, text)
}

/// Reference values for one position, computed by direct summation.
#[derive(Debug, Clone, Copy)]
pub struct Reference {
    pub surprisal: f64,
    pub entropy: f64,
    pub sigma: f64,
    pub sigma_uncentered: f64,
    pub z: f64,
}

/// Evaluates surprisal, entropy, both σ forms and z in double-double
/// arithmetic. Probabilities are `exp(lp)` rounded once to f64; every later
/// operation carries about 32 significant digits.
pub fn reference(logprobs: &[f64], actual: usize) -> Reference {
    use dd::Dd;
    let mut h = Dd::ZERO;
    let mut m2 = Dd::ZERO;
    for &lp in logprobs {
        let p = Dd::from(lp.exp());
        let l = Dd::from(lp);
        h = h - p * l;
        m2 = m2 + p * l * l;
    }
    let mut centered = Dd::ZERO;
    for &lp in logprobs {
        let d = Dd::from(-lp) - h;
        centered = centered + Dd::from(lp.exp()) * d * d;
    }
    let sigma = centered.max_zero().sqrt();
    let sigma_uncentered = (m2 - h * h).max_zero().sqrt();
    let s = Dd::from(-logprobs[actual]);
    let z = if sigma.to_f64() < 1e-9 { Dd::ZERO } else { (s - h) / sigma };
    Reference {
        surprisal: s.to_f64(),
        entropy: h.to_f64(),
        sigma: sigma.to_f64(),
        sigma_uncentered: sigma_uncentered.to_f64(),
        z: z.to_f64(),
    }
}

/// Normalized log-probabilities from raw scores, summed in double-double.
pub fn normalize(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = dd::Dd::ZERO;
    for &x in logits {
        total = total + dd::Dd::from((x - max).exp());
    }
    let log_total = total.to_f64().ln();
    logits.iter().map(|&x| x - max - log_total).collect()
}

/// A random full distribution over `support` tokens. The spread of the
/// scores varies from nearly uniform to sharply peaked.
pub fn random_logprobs(rng: &mut impl Rng, support: usize) -> Vec<f64> {
    let scale = rng.random_range(0.05..8.0f64);
    let logits: Vec<f64> = (0..support)
        .map(|_| {
            let base = rng.random_range(-1.0..1.0f64) * scale;
            // an occasional dominant token
            if rng.random_bool(0.02) { base + 10.0 } else { base }
        })
        .collect();
    normalize(&logits)
}

pub fn full(position: usize, logprobs: &[f64]) -> NextTokenDistribution {
    NextTokenDistribution::full(position, logprobs.iter().enumerate().map(|(i, &lp)| (i as TokenId, lp)).collect())
        .expect("valid distribution")
}

/// Distribution giving `actual` probability `p` and spreading the rest
/// evenly over the other ids of a vocabulary of `vocab_size`.
pub fn with_actual_probability(
    actual: TokenId,
    p: f64,
    vocab_size: usize,
) -> Result<NextTokenDistribution, BackendError> {
    let others = (vocab_size - 1) as f64;
    let rest = ((1.0 - p) / others).ln();
    NextTokenDistribution::full(
        0,
        (0..vocab_size as TokenId)
            .map(|id| (id, if id == actual { p.ln() } else { rest }))
            .collect(),
    )
}

/// Word-level vocabulary with `<bos>` as id 0.
pub fn word_vocab<'a>(texts: impl IntoIterator<Item = &'a str>) -> Vocab {
    Vocab::from_corpus(&["<bos>"], texts).expect("vocabulary builds")
}

/// Every actual token is assigned probability `exp(-nll)`.
pub fn constant_nll_backend(id: &str, vocab: Vocab, nll: f64) -> SyntheticBackend {
    let v = vocab.len();
    SyntheticBackend::new(id, vocab, Some(0), move |ctx, actual, _| {
        let target = actual.unwrap_or_else(|| 1 + (ctx.len() as TokenId % (v as TokenId - 1)));
        with_actual_probability(target, (-nll).exp(), v)
    })
}

/// Full distribution with the listed probabilities and the remaining mass
/// spread evenly over every other id.
pub fn peaked(vocab_size: usize, listed: &[(TokenId, f64)]) -> Result<NextTokenDistribution, BackendError> {
    let listed_mass: f64 = listed.iter().map(|e| e.1).sum();
    let rest = ((1.0 - listed_mass) / (vocab_size - listed.len()) as f64).ln();
    NextTokenDistribution::full(
        0,
        (0..vocab_size as TokenId)
            .map(|id| match listed.iter().find(|e| e.0 == id) {
                Some(&(_, p)) => (id, p.ln()),
                None => (id, rest),
            })
            .collect(),
    )
}

fn item(before: &str, candidates: [&str; 2], answer_index: usize, after: &str, field: &str, id: &str) -> ClozeItem {
    ClozeItem {
        text_before: before.into(),
        text_after: after.into(),
        candidates: candidates.map(String::from),
        answer_index,
        field: field.into(),
        source_id: id.into(),
    }
}

/// Two-way items with both answer positions and two fields.
pub fn cloze_items() -> Vec<ClozeItem> {
    vec![
        item("Repeated exposure made trust", [" higher", " lower"], 0, " among viewers.", "psychology", "p1"),
        item("Delays made recall", [" higher", " lower"], 1, " overall.", "psychology", "p2"),
        item("Warm greetings made ratings", [" positive", " negative"], 0, " in the lab.", "psychology", "p3"),
        item("Hostile replies made tone", [" positive", " negative"], 1, " online.", "psychology", "p4"),
        item("Coverage made issue salience", [" higher", " lower"], 0, " for readers.", "communication", "c1"),
        item("Paywalls made reach", [" higher", " lower"], 1, " across outlets.", "communication", "c2"),
        item("Civil comments made sentiment", [" positive", " negative"], 0, " in threads.", "communication", "c3"),
        item("Scandals made evaluations", [" positive", " negative"], 1, " of leaders.", "communication", "c4"),
    ]
}

/// 100 items: 60 with gold " positive" (48 preferred by [`mixed_favor`]) and
/// 40 with gold " negative" (20 preferred). Raw accuracy 0.68, prior
/// corrected 0.65.
pub fn mixed_cloze_items() -> Vec<ClozeItem> {
    (0..100)
        .map(|n| {
            let stem = format!("Study {} arm {} made ratings", n / 10, n % 10);
            let answer = usize::from(n >= 60);
            item(&stem, [" positive", " negative"], answer, ".", "mixed", &format!("m{n}"))
        })
        .collect()
}

pub fn mixed_favor(n: usize) -> bool {
    n < 48 || (60..80).contains(&n)
}

pub fn completed(item: &ClozeItem, index: usize) -> String {
    format!("{}{}{}", item.text_before, item.candidates[index], item.text_after)
}

/// Prefers the gold candidate (or, with `favor_gold = false`, the other one)
/// right after each item's stem; every other position is uninformative.
pub fn cloze_backend(id: &str, items: &[ClozeItem], favor_gold: bool) -> SyntheticBackend {
    cloze_backend_by(id, items, |_| favor_gold)
}

/// Like [`cloze_backend`], choosing per item index whether gold is preferred.
pub fn cloze_backend_by(id: &str, items: &[ClozeItem], favor_gold: impl Fn(usize) -> bool) -> SyntheticBackend {
    let texts: Vec<String> = items.iter().flat_map(|i| [completed(i, 0), completed(i, 1)]).collect();
    let vocab = word_vocab(texts.iter().map(String::as_str));
    let v = vocab.len();
    let cues: Vec<(Vec<TokenId>, TokenId, TokenId)> = items
        .iter()
        .enumerate()
        .map(|(n, i)| {
            let ids = |t: &str| -> Vec<TokenId> { vocab.tokenize(t).unwrap().spans.iter().map(|s| s.id).collect() };
            let gold = ids(i.gold())[0];
            let other = ids(&i.candidates[1 - i.answer_index])[0];
            let stem = ids(&i.text_before);
            if favor_gold(n) { (stem, gold, other) } else { (stem, other, gold) }
        })
        .collect();
    SyntheticBackend::new(id, vocab, Some(0), move |ctx, actual, _| {
        match cues.iter().find(|c| c.0 == ctx[1..]) {
            Some(&(_, preferred, other)) => peaked(v, &[(preferred, 0.8), (other, 0.1)]),
            None => peaked(v, &[(actual.unwrap_or(1), 0.5)]),
        }
    })
}

const WORDS: &[&str] = &[
    "the", "model", "reads", "text", "Scholars", "argue", "that", "It", "Dr.", "Smith", "e.g.", "3.5", "A", "data",
    "\"Quoted", "results.\"", "(see", "Fig.", "2)", "Why", "not", "News", "agenda", "setting",
];

/// Random prose with sentence terminators, abbreviations and blank lines.
pub fn random_text(rng: &mut ChaCha8Rng) -> String {
    let mut text = String::new();
    for p in 0..rng.random_range(1..4) {
        if p > 0 {
            text.push_str(["\n\n", "\n \n", "\n\n\n"][rng.random_range(0..3)]);
        }
        for s in 0..rng.random_range(1..5) {
            if s > 0 {
                text.push(' ');
            }
            for w in 0..rng.random_range(1..8) {
                if w > 0 {
                    text.push(' ');
                }
                text.push_str(WORDS[rng.random_range(0..WORDS.len())]);
            }
            text.push(['.', '!', '?', ','][rng.random_range(0..4)]);
        }
    }
    text
}

/// Backend whose distributions are pseudo-random functions of the position.
pub fn random_backend(text: &str, seed: u64, bos: bool) -> SyntheticBackend {
    let vocab = word_vocab([text]);
    let v = vocab.len();
    SyntheticBackend::new("fuzz", vocab, bos.then_some(0), move |_, _, pos| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (pos as u64).wrapping_mul(0x9e37_79b9));
        let lp = random_logprobs(&mut rng, v);
        Ok(full(pos, &lp))
    })
}

/// Segments must tile the document and conserve total surprisal.
pub fn check_partition(a: &DocumentAnalysis, segments: &[SegmentStats]) -> Result<(), String> {
    let (first, last) = match (segments.first(), segments.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err("no segments".into()),
    };
    if first.token_start != 0 || last.token_end != a.tokens.len() {
        return Err("segments do not span the document".into());
    }
    for w in segments.windows(2) {
        if w[0].token_end != w[1].token_start || w[0].byte_end != w[1].byte_start {
            return Err(format!("gap or overlap at token {}", w[0].token_end));
        }
    }
    let scored: usize = segments.iter().map(|s| s.scored_count).sum();
    if scored != a.stats.len() {
        return Err(format!("{scored} scored tokens in segments, {} in the document", a.stats.len()));
    }
    let total: f64 = a.stats.iter().map(|s| s.surprisal_nats).sum();
    let rebuilt: f64 = segments
        .iter()
        .filter_map(|s| s.mean_surprisal_nats.map(|m| m * s.scored_count as f64))
        .sum();
    if (total - rebuilt).abs() >= 1e-9 {
        return Err(format!("total surprisal {total} rebuilt as {rebuilt}"));
    }
    Ok(())
}
