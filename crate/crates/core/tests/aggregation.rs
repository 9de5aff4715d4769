mod common;

use mirror_core::aggregate::{aggregate_segments, rank_by_surprisal, SegmentExtent, SegmentKind};
use mirror_core::backend::{NextTokenDistribution, SyntheticBackend};
use mirror_core::{analyze_document, AnalysisOptions, DocumentAnalysis};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn segments_partition_and_conserve_surprisal(seed in any::<u64>(), bos in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text = common::random_text(&mut rng);
        let backend = common::random_backend(&text, seed, bos);
        let a = analyze_document(&text, &backend, &AnalysisOptions::default()).unwrap();
        common::check_partition(&a, &a.views.sentences).unwrap();
        common::check_partition(&a, &a.views.paragraphs).unwrap();
        let ranked = rank_by_surprisal(&a, usize::MAX);
        prop_assert_eq!(ranked.len(), a.stats.len());
        for w in ranked.windows(2) {
            prop_assert!(w[0].surprisal_nats >= w[1].surprisal_nats);
        }
    }
}

fn analysis_with_z(z: &[f64], bos: bool) -> DocumentAnalysis {
    let text = "w0 w1 w2 w3";
    let vocab = common::word_vocab([text]);
    let v = vocab.len();
    let backend = SyntheticBackend::new("fixed", vocab, bos.then_some(0), move |_, _, pos| {
        NextTokenDistribution::full(pos, (0..v as u32).map(|i| (i, -(v as f64).ln())).collect())
    });
    let mut a = analyze_document(text, &backend, &AnalysisOptions::default()).unwrap();
    for (s, &z) in a.stats.iter_mut().zip(z) {
        s.z = z;
        s.flagged = z >= a.options.z_threshold;
    }
    a
}

fn whole(a: &DocumentAnalysis) -> SegmentExtent {
    SegmentExtent {
        byte_start: 0,
        byte_end: a.source_text.len(),
        token_start: 0,
        token_end: a.tokens.len(),
    }
}

#[test]
fn sentence_mean_and_max() {
    let a = analysis_with_z(&[0.0, 1.0, 2.0, 3.0], true);
    let s = &aggregate_segments(&a, &[whole(&a)], SegmentKind::Sentence)[0];
    assert_eq!(s.mean_z, Some(1.5));
    assert_eq!(s.max_z, Some(3.0));
    assert_eq!(s.flagged_fraction, Some(0.5));
}

#[test]
fn unscored_tokens_are_left_out_of_averages() {
    // without BOS the first token has no distribution
    let a = analysis_with_z(&[1.0, 2.0, 3.0], false);
    assert_eq!(a.unscored_positions, [0]);
    let s = &aggregate_segments(&a, &[whole(&a)], SegmentKind::Sentence)[0];
    assert_eq!(s.scored_count, 3);
    assert_eq!(s.mean_z, Some(2.0));
}

#[test]
fn rank_examples() {
    let mut a = analysis_with_z(&[0.0, 1.0, 2.0, 3.0], true);
    for (s, v) in a.stats.iter_mut().zip([1.0, 5.0, 3.0, 5.0]) {
        s.surprisal_nats = v;
    }
    let r = rank_by_surprisal(&a, 3);
    let positions: Vec<usize> = r.iter().map(|t| t.position).collect();
    assert_eq!(positions, [1, 3, 2]);
    assert_eq!(rank_by_surprisal(&a, 10).len(), 4);
}

#[test]
fn single_paragraph_without_blank_line() {
    let text = "One line.\nAnother line.";
    let backend = common::random_backend(text, 7, true);
    let a = analyze_document(text, &backend, &AnalysisOptions::default()).unwrap();
    assert_eq!(a.views.paragraphs.len(), 1);
    assert_eq!(a.views.sentences.len(), 2);
}
