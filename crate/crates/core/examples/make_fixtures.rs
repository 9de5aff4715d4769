//! Regenerates the bundled replay fixtures and their golden analyses.
//!
//! ```text
//! cargo run -p mirror-core --example make_fixtures
//! ```
//!
//! Token boundaries are written out by hand (`|` separates tokens) so the
//! fixtures carry sub-word splits without needing a trained tokenizer.
//! Distributions are pseudo-random around a few pinned probabilities.

use std::collections::BTreeMap;
use std::path::Path;

use mirror_core::backend::{
    DistributionKind, NextTokenDistribution, ReplayBackend, ReplayDocument, ReplayHeader, TokenSpan,
};
use mirror_core::{analyze_document, AnalysisOptions, Backend};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[path = "../tests/common/mod.rs"]
mod common;

const BACKEND_ID: &str = "fixture-lm";
const BOS: &str = "<bos>";

/// Token text with its actual probability and pinned alternatives.
type Pinned = (&'static str, f64, &'static [(&'static str, f64)]);

struct Doc {
    file: &'static str,
    kind: DistributionKind,
    tokens: &'static str,
    pinned: &'static [Pinned],
    /// alternatives added at every position
    everywhere: &'static [(&'static str, f64)],
}

const DOCS: &[Doc] = &[
    Doc {
        file: "fact.jsonl",
        kind: DistributionKind::Full,
        tokens: "Ag|enda| setting| theory| was| proposed| by| Ger|bner| and| Katz| in| 1972|.| It| explains| how| media| coverage| shapes| the| issues| that| the| public| considers| important|.",
        pinned: &[
            (" Ger", 0.002, &[(" McC", 0.64), (" Max", 0.09), (" Bernard", 0.06), (" the", 0.05)]),
            ("bner", 0.93, &[]),
            (" Katz", 0.03, &[(" Shaw", 0.52), (" McC", 0.04)]),
            (" 1972", 0.41, &[(" 1968", 0.12)]),
        ],
        everywhere: &[],
    },
    Doc {
        file: "locations.jsonl",
        kind: DistributionKind::Full,
        tokens: "Communication| research| grounded| in| curiosity| can| travel| beyond| its| usual| sites|.| Scholars| in| African| locations| bring| cosmopolitan| questions| to| the| field|.",
        pinned: &[
            (" curiosity", 0.006, &[(" theory", 0.31), (" practice", 0.12)]),
            (" African", 0.011, &[(" the", 0.24), (" different", 0.09)]),
            (" locations", 0.002, &[("-", 0.167), (" American", 0.147), (" countries", 0.05)]),
            (" cosmopolitan", 0.003, &[(" new", 0.21), (" important", 0.11)]),
        ],
        everywhere: &[],
    },
    Doc {
        file: "discussion.jsonl",
        kind: DistributionKind::TopK,
        tokens: "In| this| meta|-|analysis|,| users| adopt| privacy| behaviours| when| platform| design| and| literacy| guide| their| choices|.|\n\n|Future| research| should| test| whether| these| findings| generalize| across| contexts|.",
        pinned: &[
            (" platform", 0.004, &[(" their", 0.22), (" data", 0.07)]),
            (" literacy", 0.003, &[(" privacy", 0.25), (" security", 0.09)]),
            (" guide", 0.005, &[(" shape", 0.2), (" inform", 0.1)]),
        ],
        everywhere: &[(" section", 0.08), (" safety", 0.06), (" protection", 0.05)],
    },
];

const FILLER: &[&str] = &[
    " social", " political", " results", " model", " studies", " however", " effect", " role", " public", " case",
    " analysis", " scholars", " of", " on", " with", " from", " as", " is", " are", " be", " which", " this",
    " more", " between", " within", " approach", " evidence", " concept", " framework", " literature",
];

fn split(tokens: &str) -> Vec<String> {
    tokens.split('|').map(String::from).collect()
}

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests");
    let fixture_dir = root.join("fixtures/replay");
    let golden_dir = root.join("golden");
    std::fs::create_dir_all(&fixture_dir).unwrap();
    std::fs::create_dir_all(&golden_dir).unwrap();

    // shared vocabulary: BOS, then sorted surface strings
    let mut surfaces: std::collections::BTreeSet<String> = FILLER.iter().map(|s| s.to_string()).collect();
    for d in DOCS {
        surfaces.extend(split(d.tokens));
        for (_, _, alts) in d.pinned {
            surfaces.extend(alts.iter().map(|a| a.0.to_string()));
        }
        surfaces.extend(d.everywhere.iter().map(|a| a.0.to_string()));
    }
    surfaces.remove(BOS);
    let vocab: Vec<String> = std::iter::once(BOS.to_string()).chain(surfaces).collect();
    let id_of: BTreeMap<&str, u32> = vocab.iter().enumerate().map(|(i, s)| (s.as_str(), i as u32)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for doc in DOCS {
        let tokens = split(doc.tokens);
        let mut spans = Vec::new();
        let mut at = 0;
        for t in &tokens {
            spans.push(TokenSpan {
                id: id_of[t.as_str()],
                text: t.clone(),
                byte_start: at,
                byte_end: at + t.len(),
            });
            at += t.len();
        }
        let mut distributions = Vec::new();
        for (pos, span) in spans.iter().enumerate() {
            let mut probs: BTreeMap<u32, f64> = BTreeMap::new();
            let pinned = doc.pinned.iter().find(|p| p.0 == span.text);
            let actual_p = pinned.map_or_else(|| rng.random_range(0.35..0.7), |p| p.1);
            probs.insert(span.id, actual_p);
            for &(alt, p) in pinned.map_or(&[][..], |p| p.2).iter().chain(doc.everywhere) {
                if id_of[alt] != span.id {
                    probs.insert(id_of[alt], p);
                }
            }
            if pinned.is_none() {
                for _ in 0..3 {
                    let f = FILLER[rng.random_range(0..FILLER.len())];
                    probs.entry(id_of[f]).or_insert_with(|| rng.random_range(0.005..0.03));
                }
            }
            let listed: f64 = probs.values().sum();
            assert!(listed < 1.0, "{}: position {pos} over-full", doc.file);
            let rest = 1.0 - listed;
            let dist = match doc.kind {
                DistributionKind::TopK => NextTokenDistribution::top_k(
                    pos,
                    probs.iter().map(|(&id, &p)| (id, p.ln())).collect(),
                    Some(rest.ln()),
                ),
                DistributionKind::Full => {
                    let others: Vec<u32> = (0..vocab.len() as u32).filter(|i| !probs.contains_key(i)).collect();
                    // keep every unpinned token well below the pinned ones
                    let weights: Vec<f64> = others.iter().map(|_| rng.random_range(0.2..1.0f64).powi(3)).collect();
                    let total: f64 = weights.iter().sum();
                    for (&id, w) in others.iter().zip(&weights) {
                        probs.insert(id, rest * w / total);
                    }
                    NextTokenDistribution::full(pos, probs.iter().map(|(&id, &p)| (id, p.ln())).collect())
                }
            }
            .unwrap();
            distributions.push(Some(dist));
        }
        let in_doc: std::collections::BTreeSet<u32> = spans.iter().map(|s| s.id).collect();
        let mut header_vocab: Vec<(u32, String)> = distributions
            .iter()
            .flatten()
            .flat_map(|d| d.entries().iter().map(|e| e.0))
            .filter(|id| !in_doc.contains(id))
            .map(|id| (id, vocab[id as usize].clone()))
            .collect();
        header_vocab.sort();
        header_vocab.dedup();
        let recorded = ReplayDocument {
            header: ReplayHeader {
                backend_id: BACKEND_ID.into(),
                vocab_size: vocab.len(),
                bos_id: Some(0),
                tokenizer: "fixture-pieces-v1".into(),
                vocab: header_vocab,
                max_context: Some(512),
            },
            spans,
            distributions,
        };
        let path = fixture_dir.join(doc.file);
        std::fs::write(&path, recorded.to_jsonl()).unwrap();

        let backend = ReplayBackend::load(&path).unwrap();
        let text = recorded.text();
        let analysis = analyze_document(&text, &backend, &AnalysisOptions::default()).unwrap();
        let flagged: Vec<&str> = analysis
            .stats
            .iter()
            .filter(|s| s.flagged)
            .map(|s| analysis.tokens[s.position].text.as_str())
            .collect();
        println!("{}: {} tokens, flagged {:?}", doc.file, analysis.tokens.len(), flagged);
        for (tok, ..) in doc.pinned {
            let s = analysis.stats.iter().find(|s| analysis.tokens[s.position].text == *tok).unwrap();
            println!("  {tok:?} S={:.3} H={:.3} sigma={:.3} z={:.3}", s.surprisal_nats, s.entropy_nats, s.sigma_nats, s.z);
        }
        if let Some(m) = &analysis.views.missing {
            let top: Vec<_> = m.entries.iter().take(5).map(|e| (&e.text, e.cumulative_probability)).collect();
            println!("  missing {top:?}");
        }
        let golden = golden_dir.join(doc.file.replace(".jsonl", ".json"));
        std::fs::write(golden, analysis.to_canonical_json() + "\n").unwrap();
        let _ = backend.descriptor();
    }
    write_harness_fixtures(&fixture_dir);
}

fn write_recorded(path: &Path, backend: &dyn Backend, texts: &[String]) {
    let mut out = String::new();
    for text in texts {
        out.push_str(&ReplayDocument::record(backend, text, "words-v1").unwrap().to_jsonl());
    }
    std::fs::write(path, out).unwrap();
}

/// Cloze items with oracle and anti-oracle recordings, and constant
/// likelihood recordings of the perplexity corpus.
fn write_harness_fixtures(fixture_dir: &Path) {
    let cloze = fixture_dir.join("../cloze");
    std::fs::create_dir_all(&cloze).unwrap();
    let items = common::cloze_items();
    let lines: Vec<String> = items.iter().map(|i| serde_json::to_string(i).unwrap()).collect();
    std::fs::write(cloze.join("items.jsonl"), lines.join("\n") + "\n").unwrap();
    let texts: Vec<String> = items
        .iter()
        .flat_map(|i| [common::completed(i, 0), common::completed(i, 1)])
        .collect();
    write_recorded(&cloze.join("oracle.jsonl"), &common::cloze_backend("oracle", &items, true), &texts);
    write_recorded(&cloze.join("anti_oracle.jsonl"), &common::cloze_backend("anti-oracle", &items, false), &texts);

    let corpus = fixture_dir.join("../corpus");
    let docs = mirror_core::bench::load_corpus(&corpus, &corpus.join("manifest.jsonl")).unwrap();
    let texts: Vec<String> = docs.iter().map(|d| d.text.clone()).collect();
    for (name, nll) in [("nll_2.0", 2.0), ("nll_1.5", 1.5)] {
        let vocab = common::word_vocab(texts.iter().map(String::as_str));
        let backend = common::constant_nll_backend(name, vocab, nll);
        write_recorded(&corpus.join(format!("{name}.jsonl")), &backend, &texts);
    }
    println!("harness fixtures written");
}
