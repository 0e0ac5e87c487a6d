use dict_nmt::eval::{corpus_bleu, tokenize_13a};
use proptest::prelude::*;

fn fixture() -> (Vec<String>, Vec<String>) {
    let read = |name: &str| -> Vec<String> {
        let path = format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
        std::fs::read_to_string(path).unwrap().lines().map(String::from).collect()
    };
    (read("bleu_hyp.txt"), read("bleu_ref.txt"))
}

// Computed offline with sacrebleu 2.4.3: corpus_bleu(hyps, [refs]) at defaults.
const FIXTURE_BLEU: f64 = 50.09378257809804;
const FIXTURE_COUNTS: [u64; 4] = [131, 88, 57, 37];
const FIXTURE_TOTALS: [u64; 4] = [162, 143, 124, 105];

#[test]
fn fixture_matches_reference_implementation() {
    let (h, r) = fixture();
    assert_eq!(h.len(), 20);
    let b = corpus_bleu(&h, &r).unwrap();
    assert!((b.bleu - FIXTURE_BLEU).abs() < 0.01, "{}", b.bleu);
    assert_eq!(b.correct, FIXTURE_COUNTS);
    assert_eq!(b.total, FIXTURE_TOTALS);
    assert_eq!((b.hyp_len, b.ref_len), (162, 172));
    assert!((b.brevity_penalty - 0.9401381982949014).abs() < 1e-12);
    assert_eq!(b.display_score(), "50.1");
}

#[test]
fn no_four_gram_overlap_uses_exp_smoothing() {
    let b = corpus_bleu(&["the cat sat down", "a dog ran"], &["the cat lay down", "one dog ran"]).unwrap();
    assert_eq!(b.correct, [5, 2, 0, 0]);
    assert!((b.bleu - 33.03164318013807).abs() < 0.01, "{}", b.bleu);
}

#[test]
fn signature_records_settings() {
    let b = corpus_bleu(&["a"], &["a"]).unwrap();
    for part in ["tok:13a", "smooth:exp", "case:mixed", "nrefs:1"] {
        assert!(b.signature.contains(part), "{}", b.signature);
    }
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["the", "a", "cat", "dog", "sat", "ran", "mat", ".", ","]), 0..9)
        .prop_map(|w| w.join(" "))
}

fn long_sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["the", "a", "cat", "dog", "sat", "ran", "mat", ".", ","]), 4..12)
        .prop_map(|w| w.join(" "))
}

fn corpus() -> impl Strategy<Value = Vec<(String, String)>> {
    prop::collection::vec((sentence(), sentence()), 1..12)
}

proptest! {
    #[test]
    fn permutation_invariant(pairs in corpus(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let (h, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut dict_nmt::seed::rng(seed));
        let (hs, rs): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
        let a = corpus_bleu(&h, &r).unwrap();
        let b = corpus_bleu(&hs, &rs).unwrap();
        prop_assert_eq!(a.correct, b.correct);
        prop_assert_eq!(a.total, b.total);
        prop_assert!((a.bleu - b.bleu).abs() < 1e-9);
    }

    #[test]
    fn identical_corpus_scores_100(refs in prop::collection::vec(long_sentence(), 1..8)) {
        let b = corpus_bleu(&refs, &refs).unwrap();
        prop_assert_eq!(b.bleu, 100.0);
        prop_assert_eq!(b.correct, b.total);
    }

    #[test]
    fn no_brevity_penalty_for_long_hypotheses(pairs in corpus()) {
        let (h, r): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let b = corpus_bleu(&h, &r).unwrap();
        if b.hyp_len >= b.ref_len {
            prop_assert_eq!(b.brevity_penalty, 1.0);
        } else {
            prop_assert!(b.brevity_penalty < 1.0);
        }
        prop_assert!((0.0..=100.0).contains(&b.bleu));
    }

    #[test]
    fn tokenization_only_inserts_spaces(s in "[a-zA-Z0-9 .,!?;:'\"()$%/-]{0,40}") {
        let toks = tokenize_13a(&s);
        prop_assert!(toks.iter().all(|t| !t.is_empty() && !t.contains(' ')));
        let squeezed: String = s.split_whitespace().collect();
        prop_assert_eq!(toks.concat(), squeezed);
    }
}
