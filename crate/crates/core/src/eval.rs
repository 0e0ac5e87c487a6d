//! Corpus-level BLEU with SacreBLEU's default settings (13a tokenization,
//! n-grams up to 4, exponential smoothing, closest-reference brevity
//! penalty), and the word-for-word dictionary baseline.

use std::collections::HashMap;
use std::sync::OnceLock;

use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{DictDataset, ParallelCorpus};
use crate::dictionary::{translate_sentence, BilingualDictionary, WordEmbeddings};
use crate::error::{Error, Result};
use crate::seed;

pub const MAX_NGRAM_ORDER: usize = 4;

const SIGNATURE: &str = concat!("nrefs:1|case:mixed|eff:no|tok:13a|smooth:exp|version:dict-nmt-", env!("CARGO_PKG_VERSION"));

/// Log floor for zero precisions, as in the reference scorer.
const LOG_ZERO: f64 = -9_999_999_999.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// Score on the 0..100 scale.
    pub bleu: f64,
    /// Modified n-gram precisions in percent, n = 1..4 (after smoothing).
    pub precisions: [f64; MAX_NGRAM_ORDER],
    pub correct: [u64; MAX_NGRAM_ORDER],
    pub total: [u64; MAX_NGRAM_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: u64,
    pub ref_len: u64,
    pub signature: String,
}

impl BleuReport {
    /// The score formatted to one decimal, as in result tables.
    pub fn display_score(&self) -> String {
        format!("{:.1}", self.bleu)
    }
}

fn rules() -> &'static [(Regex, &'static str); 4] {
    static RULES: OnceLock<[(Regex, &'static str); 4]> = OnceLock::new();
    RULES.get_or_init(|| {
        [
            (Regex::new(r"([\{-~\[-` -&\(-\+:-@/])").unwrap(), " $1 "),
            (Regex::new(r"([^0-9])([\.,])").unwrap(), "$1 $2 "),
            (Regex::new(r"([\.,])([^0-9])").unwrap(), " $1 $2"),
            (Regex::new(r"([0-9])(-)").unwrap(), "$1 $2 "),
        ]
    })
}

/// The `13a` tokenizer (mteval-v13a as used by WMT).
pub fn tokenize_13a(text: &str) -> Vec<String> {
    let mut line = text
        .trim_end()
        .replace("<skipped>", "")
        .replace("-\n", "")
        .replace('\n', " ");
    if line.contains('&') {
        line = line
            .replace("&quot;", "\"")
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">");
    }
    let mut line = format!(" {line} ");
    for (re, rep) in rules() {
        line = re.replace_all(&line, *rep).into_owned();
    }
    line.split_whitespace().map(String::from).collect()
}

fn ngram_counts(tokens: &[String]) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    for n in 1..=MAX_NGRAM_ORDER {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Sufficient statistics of one segment against its references.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct SegmentStats {
    hyp_len: u64,
    ref_len: u64,
    correct: [u64; MAX_NGRAM_ORDER],
    total: [u64; MAX_NGRAM_ORDER],
}

fn segment_stats(hyp: &str, refs: &[&str]) -> SegmentStats {
    let hyp = tokenize_13a(hyp);
    let hyp_len = hyp.len() as u64;
    let refs: Vec<Vec<String>> = refs.iter().map(|r| tokenize_13a(r)).collect();

    // closest reference length, shorter wins ties
    let mut ref_len = None::<u64>;
    for r in &refs {
        let len = r.len() as u64;
        ref_len = Some(match ref_len {
            None => len,
            Some(best) => {
                let (d, bd) = (len.abs_diff(hyp_len), best.abs_diff(hyp_len));
                if d < bd || (d == bd && len < best) {
                    len
                } else {
                    best
                }
            }
        });
    }

    let mut max_ref: HashMap<&[String], u64> = HashMap::new();
    for r in &refs {
        for (gram, c) in ngram_counts(r) {
            let e = max_ref.entry(gram).or_insert(0);
            *e = (*e).max(c);
        }
    }

    let mut stats = SegmentStats {
        hyp_len,
        ref_len: ref_len.unwrap_or(0),
        ..Default::default()
    };
    for (gram, c) in ngram_counts(&hyp) {
        let n = gram.len() - 1;
        stats.total[n] += c;
        stats.correct[n] += c.min(max_ref.get(gram).copied().unwrap_or(0));
    }
    stats
}

fn score_from_stats(s: &SegmentStats) -> BleuReport {
    let bp = if s.hyp_len < s.ref_len {
        if s.hyp_len > 0 {
            (1.0 - s.ref_len as f64 / s.hyp_len as f64).exp()
        } else {
            0.0
        }
    } else {
        1.0
    };
    let mut precisions = [0.0; MAX_NGRAM_ORDER];
    let mut report = BleuReport {
        bleu: 0.0,
        precisions,
        correct: s.correct,
        total: s.total,
        brevity_penalty: bp,
        hyp_len: s.hyp_len,
        ref_len: s.ref_len,
        signature: SIGNATURE.to_string(),
    };
    if s.correct.iter().all(|&c| c == 0) {
        return report;
    }
    let mut smooth = 1.0;
    for n in 0..MAX_NGRAM_ORDER {
        if s.total[n] == 0 {
            break;
        }
        precisions[n] = if s.correct[n] == 0 {
            smooth *= 2.0;
            100.0 / (smooth * s.total[n] as f64)
        } else {
            100.0 * s.correct[n] as f64 / s.total[n] as f64
        };
    }
    let log_sum: f64 = precisions
        .iter()
        .map(|&p| if p == 0.0 { LOG_ZERO } else { (p / 100.0).ln() })
        .sum();
    report.precisions = precisions;
    // averaging logs of fractions keeps a perfect match at exactly 100
    report.bleu = 100.0 * bp * (log_sum / MAX_NGRAM_ORDER as f64).exp();
    report
}

/// Corpus BLEU with one reference per hypothesis.
pub fn corpus_bleu<H: AsRef<str>, R: AsRef<str>>(hypotheses: &[H], references: &[R]) -> Result<BleuReport> {
    if hypotheses.len() != references.len() {
        return Err(Error::InvalidInput(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let refs: Vec<Vec<&str>> = references.iter().map(|r| vec![r.as_ref()]).collect();
    corpus_bleu_multi(hypotheses, &refs)
}

/// Corpus BLEU where each hypothesis may have several references.
pub fn corpus_bleu_multi<H: AsRef<str>>(hypotheses: &[H], references: &[Vec<&str>]) -> Result<BleuReport> {
    if hypotheses.is_empty() {
        return Err(Error::InvalidInput("corpus_bleu of an empty corpus".into()));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::InvalidInput(format!(
            "{} hypotheses but {} reference sets",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut agg = SegmentStats::default();
    for (h, refs) in hypotheses.iter().zip(references) {
        if refs.is_empty() {
            return Err(Error::InvalidInput("hypothesis without reference".into()));
        }
        let s = segment_stats(h.as_ref(), refs);
        agg.hyp_len += s.hyp_len;
        agg.ref_len += s.ref_len;
        for n in 0..MAX_NGRAM_ORDER {
            agg.correct[n] += s.correct[n];
            agg.total[n] += s.total[n];
        }
    }
    let mut report = score_from_stats(&agg);
    if references.iter().any(|r| r.len() != 1) {
        report.signature = report.signature.replacen("nrefs:1", "nrefs:var", 1);
    }
    Ok(report)
}

/// Scores plain word-for-word dictionary translation of a test corpus.
pub fn word_for_word_baseline<R: Rng + ?Sized>(
    test: &ParallelCorpus,
    dict: &BilingualDictionary,
    emb: &WordEmbeddings,
    rng: &mut R,
) -> Result<BleuReport> {
    let base = rng.gen::<u64>();
    let hyps: Vec<String> = test
        .pairs
        .iter()
        .enumerate()
        .map(|(k, p)| translate_sentence(&p.source, dict, emb, &mut seed::rng(seed::item_seed(base, k))).to_string())
        .collect();
    let refs: Vec<String> = test.pairs.iter().map(|p| p.target.join(" ")).collect();
    corpus_bleu(&hyps, &refs)
}

/// Scores the intermediate sequences already stored in a dataset against
/// their targets (the same baseline, for a test split).
pub fn intermediate_baseline(test: &DictDataset) -> Result<BleuReport> {
    let hyps: Vec<String> = test.pairs.iter().map(|p| p.intermediate.to_string()).collect();
    let refs: Vec<String> = test.pairs.iter().map(|p| p.target.join(" ")).collect();
    corpus_bleu(&hyps, &refs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenize_13a_examples() {
        assert_eq!(tokenize_13a("Hello, world!"), toks(&["Hello", ",", "world", "!"]));
        assert_eq!(tokenize_13a("3.5"), toks(&["3.5"]));
        assert!(tokenize_13a("").is_empty());
        assert_eq!(tokenize_13a("1,000 and 2-3"), toks(&["1,000", "and", "2", "-", "3"]));
        assert_eq!(tokenize_13a("a &amp; b&quot;"), toks(&["a", "&", "b", "\""]));
        assert_eq!(tokenize_13a("end. Next"), toks(&["end", ".", "Next"]));
    }

    #[test]
    fn tokenize_13a_is_idempotent() {
        for s in ["Hello, world!", "It's 3.5 (approx.) -- ok?", "a/b [c] {d} $5"] {
            let once = tokenize_13a(s).join(" ");
            assert_eq!(tokenize_13a(&once).join(" "), once);
        }
    }

    #[test]
    fn identity_is_100() {
        let s = ["the cat sat on the mat", "a dog barked ."];
        let r = corpus_bleu(&s, &s).unwrap();
        assert_eq!(r.bleu, 100.0);
        assert_eq!(r.brevity_penalty, 1.0);
    }

    #[test]
    fn clipped_unigram_precision() {
        let r = corpus_bleu(&["the the the the"], &["the cat"]).unwrap();
        assert_eq!(r.correct[0], 1);
        assert_eq!(r.total[0], 4);
        assert_eq!(r.precisions[0], 25.0);
    }

    #[test]
    fn no_matches_scores_zero() {
        let r = corpus_bleu(&["x y z"], &["a b c"]).unwrap();
        assert_eq!(r.bleu, 0.0);
    }

    #[test]
    fn length_mismatch_is_error() {
        assert!(corpus_bleu(&["a"], &["a", "b"]).is_err());
    }

    #[test]
    fn empty_hypothesis_allowed() {
        let r = corpus_bleu(&["", "the cat sat on the mat"], &["a b", "the cat sat on the mat"]).unwrap();
        assert_eq!(r.hyp_len, 6);
        assert_eq!(r.ref_len, 8);
        assert!(r.brevity_penalty < 1.0);
    }

    #[test]
    fn closest_reference_length() {
        let r = corpus_bleu_multi(&["a b c d"], &[vec!["a b c", "a b c d e"]]).unwrap();
        // both differ by one; the shorter wins
        assert_eq!(r.ref_len, 3);
        assert!(r.signature.starts_with("nrefs:var"));
    }
}
