use std::collections::HashSet;

use dict_nmt::corpus::{
    bucket_by_coverage, count_at_least, create_dataset, sample_equal, split, DictDataset, ParallelCorpus, SentencePair,
};
use dict_nmt::dictionary::{coverage, translate_sentence, BilingualDictionary, Provenance, WordEmbeddings};
use dict_nmt::seed;
use dict_nmt::tokenizer::{decode, encode, normalize, wordpiece_ids, Vocabulary};
use proptest::prelude::*;

const SOURCE_WORDS: [&str; 8] = ["ka", "lo", "mi", "nu", "pe", "ra", "so", "tu"];
const TARGET_WORDS: [&str; 6] = ["dog", "cat", "runs", "eats", "big", "red"];

fn embeddings() -> WordEmbeddings {
    let mut e = WordEmbeddings::new(3);
    for (i, w) in TARGET_WORDS.iter().enumerate() {
        let x = i as f64;
        e.insert(*w, vec![x.cos(), x.sin(), 0.3 * x]).unwrap();
    }
    e
}

fn dictionary() -> impl Strategy<Value = BilingualDictionary> {
    prop::collection::vec(
        (prop::sample::select(SOURCE_WORDS.to_vec()), prop::sample::select(TARGET_WORDS.to_vec())),
        0..16,
    )
    .prop_map(|pairs| BilingualDictionary::from_pairs("xx", "en", pairs))
}

fn sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(SOURCE_WORDS.to_vec()).prop_map(String::from), 1..9)
}

fn corpus() -> impl Strategy<Value = ParallelCorpus> {
    prop::collection::vec(sentence(), 1..25).prop_map(|ss| {
        let pairs = ss
            .into_iter()
            .map(|s| SentencePair {
                target: vec!["dog".into(); s.len()],
                source: s,
            })
            .collect();
        ParallelCorpus::new("xx", "en", pairs)
    })
}

proptest! {
    #[test]
    fn translation_keeps_length_and_marks_provenance(d in dictionary(), s in sentence(), seed in any::<u64>()) {
        let t = translate_sentence(&s, &d, &embeddings(), &mut seed::rng(seed));
        prop_assert_eq!(t.len(), s.len());
        for (tok, src) in t.tokens.iter().zip(&s) {
            match d.lookup(src) {
                Some(cands) => {
                    prop_assert_eq!(tok.provenance, Provenance::Translated);
                    prop_assert!(cands.contains(&tok.surface));
                }
                None => {
                    prop_assert_eq!(tok.provenance, Provenance::Passthrough);
                    prop_assert_eq!(&tok.surface, src);
                }
            }
        }
        let cov = coverage(&s, &d).unwrap();
        prop_assert!((cov - t.translated_count() as f64 / s.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn translation_is_a_function_of_the_seed(d in dictionary(), s in sentence(), seed in any::<u64>()) {
        let a = translate_sentence(&s, &d, &embeddings(), &mut seed::rng(seed));
        let b = translate_sentence(&s, &d, &embeddings(), &mut seed::rng(seed));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn dataset_shrinks_as_threshold_rises(c in corpus(), d in dictionary(), p in 0.0..1.0f64, q in 0.0..1.0f64, seed in any::<u64>()) {
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        let at = |t: f64| create_dataset(&[c.clone()], &[d.clone()], &embeddings(), t, &mut seed::rng(seed)).unwrap();
        let (a, b) = (at(lo), at(hi));
        prop_assert!(b.len() <= a.len());
        for pair in &b.pairs {
            prop_assert!(coverage(&pair.intermediate.source, &d).unwrap() >= hi);
            prop_assert_eq!(&c.pairs[pair.index].source, &pair.intermediate.source);
        }
        let counts = count_at_least(&c, &d, &[lo, hi]).unwrap();
        prop_assert_eq!(counts, vec![a.len(), b.len()]);
    }

    #[test]
    fn buckets_partition_the_corpus(c in corpus(), d in dictionary(), cuts in prop::collection::btree_set(1u32..100, 1..5)) {
        let thresholds: Vec<f64> = cuts.into_iter().map(|t| t as f64 / 100.0).collect();
        let buckets = bucket_by_coverage(&c, &d, &thresholds).unwrap();
        prop_assert_eq!(buckets.iter().map(|b| b.pairs.len()).sum::<usize>(), c.len());
        prop_assert_eq!(buckets[0].lower, 0.0);
        prop_assert_eq!(buckets.last().unwrap().upper, 1.0);
        for b in &buckets {
            for pair in &b.pairs {
                prop_assert!(b.contains(coverage(&pair.source, &d).unwrap()));
            }
        }
    }

    #[test]
    fn split_is_an_ordered_partition(c in corpus(), f in 0.05..0.95f64, seed in any::<u64>()) {
        let d = BilingualDictionary::from_pairs("xx", "en", [("ka", "dog")]);
        let data = create_dataset(&[c], &[d], &embeddings(), 0.0, &mut seed::rng(seed)).unwrap();
        let n_test = (f * data.len() as f64).round() as usize;
        prop_assume!(n_test > 0 && n_test < data.len());
        let (train, test) = split(&data, f, &mut seed::rng(seed)).unwrap();
        prop_assert_eq!(test.len(), n_test);
        prop_assert_eq!(train.len() + test.len(), data.len());
        // both halves are subsequences of the dataset
        let position = |p: &dict_nmt::corpus::DictPair| data.pairs.iter().position(|q| q.index == p.index).unwrap();
        for half in [&train, &test] {
            let pos: Vec<usize> = half.pairs.iter().map(position).collect();
            prop_assert!(pos.windows(2).all(|w| w[0] < w[1]));
        }
        let a: HashSet<usize> = train.pairs.iter().map(|p| p.index).collect();
        prop_assert!(test.pairs.iter().all(|p| !a.contains(&p.index)));
        prop_assert_eq!(split(&data, f, &mut seed::rng(seed)).unwrap(), (train, test));
    }

    #[test]
    fn sample_equal_meets_quotas(sizes in prop::collection::vec(15usize..30, 1..4), total in 0usize..15, seed in any::<u64>()) {
        let corpora: Vec<ParallelCorpus> = sizes
            .iter()
            .enumerate()
            .map(|(l, &n)| {
                let pairs = (0..n).map(|i| SentencePair::new(&format!("s{l} w{i}"), "t")).collect();
                ParallelCorpus::new(format!("l{l}"), "en", pairs)
            })
            .collect();
        let k = corpora.len();
        let out = sample_equal(&corpora, total, &mut seed::rng(seed)).unwrap();
        prop_assert_eq!(out.iter().map(ParallelCorpus::len).sum::<usize>(), total);
        for (i, (o, c)) in out.iter().zip(&corpora).enumerate() {
            prop_assert_eq!(o.len(), total / k + usize::from(i < total % k));
            let idx: Vec<usize> = o.pairs.iter().map(|p| c.pairs.iter().position(|q| q == p).unwrap()).collect();
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn in_vocabulary_text_round_trips(words in prop::collection::vec("[a-z]{1,8}", 1..12), extra in "[a-z]{1,12}") {
        let v = Vocabulary::build(words.iter().map(String::as_str), 1, true);
        let enc = encode(&words, &v);
        prop_assert_eq!(decode(&enc, &v).unwrap(), normalize(&words, true));
        // unseen words over the same alphabet segment without UNK
        let seen: HashSet<char> = words.iter().flat_map(|w| w.chars()).collect();
        let known: String = extra.chars().filter(|c| seen.contains(c)).collect();
        prop_assume!(!known.is_empty());
        prop_assert!(!wordpiece_ids(&known, &v).contains(&v.unk_id()));
    }

    #[test]
    fn dataset_files_round_trip(c in corpus(), d in dictionary(), seed in any::<u64>()) {
        let data = create_dataset(&[c], &[d], &embeddings(), 0.0, &mut seed::rng(seed)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.tsv");
        data.save(&path, seed).unwrap();
        let (back, s) = DictDataset::load(&path).unwrap();
        prop_assert_eq!(s, seed);
        prop_assert_eq!(back, data);
    }
}

#[test]
fn empty_sentence_has_no_coverage() {
    let d = BilingualDictionary::from_pairs("xx", "en", [("ka", "dog")]);
    assert!(coverage::<&str>(&[], &d).is_err());
}

#[test]
fn mismatched_languages_are_rejected() {
    let c = ParallelCorpus::new("xx", "en", vec![SentencePair::new("ka", "dog")]);
    let d = BilingualDictionary::from_pairs("yy", "en", [("ka", "dog")]);
    assert!(create_dataset(&[c], &[d], &embeddings(), 0.5, &mut seed::rng(0)).is_err());
}

#[test]
fn sample_equal_reports_short_corpora() {
    let c = ParallelCorpus::new("xx", "en", vec![SentencePair::new("ka", "dog"); 3]);
    let err = sample_equal(&[c.clone(), c], 8, &mut seed::rng(0)).unwrap_err();
    assert!(err.to_string().contains("short of its quota 4"), "{err}");
}
