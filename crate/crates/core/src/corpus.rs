//! Parallel corpora and training-set construction.
//!
//! [`create_dataset`] pools word-to-word translations from one or more
//! source languages into a single target language, keeping only the pairs
//! whose source sentence reaches a minimum dictionary coverage, then shuffles
//! the pool.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dictionary::{
    coverage, pretokenize, translate_sentence, BilingualDictionary, IntermediateSequence, IntermediateToken,
    Provenance, WordEmbeddings,
};
use crate::error::{read_to_string, Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

impl SentencePair {
    pub fn new(source: &str, target: &str) -> Self {
        SentencePair {
            source: pretokenize(source),
            target: pretokenize(target),
        }
    }
}

/// Line-aligned sentence pairs from one source language into the target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelCorpus {
    pub src_lang: String,
    pub tgt_lang: String,
    pub pairs: Vec<SentencePair>,
}

impl ParallelCorpus {
    pub fn new(src_lang: impl Into<String>, tgt_lang: impl Into<String>, pairs: Vec<SentencePair>) -> Self {
        ParallelCorpus {
            src_lang: src_lang.into(),
            tgt_lang: tgt_lang.into(),
            pairs,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Reads two line-aligned files. Lines are split on whitespace with
/// punctuation detached; pairs with an empty side are dropped and counted.
pub fn load_parallel(
    src_path: impl AsRef<Path>,
    tgt_path: impl AsRef<Path>,
    src_lang: &str,
    tgt_lang: &str,
) -> Result<ParallelCorpus> {
    let (src_path, tgt_path) = (src_path.as_ref(), tgt_path.as_ref());
    let src = read_to_string(src_path)?;
    let tgt = read_to_string(tgt_path)?;
    let src_lines: Vec<&str> = src.lines().collect();
    let tgt_lines: Vec<&str> = tgt.lines().collect();
    if src_lines.len() != tgt_lines.len() {
        return Err(Error::Alignment {
            src_path: src_path.into(),
            tgt_path: tgt_path.into(),
            src_lines: src_lines.len(),
            tgt_lines: tgt_lines.len(),
        });
    }
    let mut pairs = Vec::with_capacity(src_lines.len());
    let mut dropped = 0;
    for (s, t) in src_lines.iter().zip(&tgt_lines) {
        let pair = SentencePair::new(s, t);
        if pair.source.is_empty() || pair.target.is_empty() {
            dropped += 1;
        } else {
            pairs.push(pair);
        }
    }
    if dropped > 0 {
        info!(
            "{}: dropped {dropped} of {} pairs with an empty side",
            src_path.display(),
            src_lines.len()
        );
    }
    Ok(ParallelCorpus::new(src_lang, tgt_lang, pairs))
}

/// Keeps pairs whose sides both have at most `max_tokens` tokens.
pub fn filter_by_length(c: &ParallelCorpus, max_tokens: usize) -> ParallelCorpus {
    assert!(max_tokens >= 1, "max_tokens must be positive");
    let pairs: Vec<SentencePair> = c
        .pairs
        .iter()
        .filter(|p| p.source.len() <= max_tokens && p.target.len() <= max_tokens)
        .cloned()
        .collect();
    if pairs.len() < c.len() {
        info!(
            "{}-{}: length filter (<= {max_tokens}) dropped {} of {} pairs",
            c.src_lang,
            c.tgt_lang,
            c.len() - pairs.len(),
            c.len()
        );
    }
    ParallelCorpus::new(c.src_lang.clone(), c.tgt_lang.clone(), pairs)
}

/// One training example: an intermediate sequence, its reference, and where
/// it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictPair {
    pub intermediate: IntermediateSequence,
    pub target: Vec<String>,
    pub lang: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictDataset {
    pub pairs: Vec<DictPair>,
    pub threshold_p: f64,
}

impl DictDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Number of pairs per source language.
    pub fn language_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for p in &self.pairs {
            *counts.entry(p.lang.clone()).or_default() += 1;
        }
        counts
    }

    /// Writes `intermediate<TAB>target` lines to `path` and a JSON sidecar
    /// (`<path>.meta.json`) with seed, threshold, counts and per-pair
    /// provenance.
    pub fn save(&self, path: impl AsRef<Path>, seed: u64) -> Result<()> {
        let path = path.as_ref();
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        for p in &self.pairs {
            writeln!(out, "{}\t{}", p.intermediate, p.target.join(" ")).map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))?;
        let meta = DatasetMeta {
            seed,
            threshold_p: self.threshold_p,
            size: self.len(),
            language_counts: self.language_counts(),
            pairs: self
                .pairs
                .iter()
                .map(|p| PairMeta {
                    lang: p.lang.clone(),
                    index: p.index,
                    source: p.intermediate.source.clone(),
                    passthrough: p
                        .intermediate
                        .tokens
                        .iter()
                        .enumerate()
                        .filter(|(_, t)| t.provenance == Provenance::Passthrough)
                        .map(|(i, _)| i)
                        .collect(),
                })
                .collect(),
        };
        let meta_path = meta_path(path);
        std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&meta_path, e))
    }

    /// Reads a dataset written by [`DictDataset::save`]; returns it with the
    /// recorded seed.
    pub fn load(path: impl AsRef<Path>) -> Result<(DictDataset, u64)> {
        let path = path.as_ref();
        let meta_path = meta_path(path);
        let meta: DatasetMeta = serde_json::from_str(&read_to_string(&meta_path)?)?;
        let text = read_to_string(path)?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() != meta.pairs.len() {
            return Err(Error::Format {
                path: path.into(),
                message: format!("{} lines but sidecar lists {} pairs", lines.len(), meta.pairs.len()),
            });
        }
        let mut pairs = Vec::with_capacity(lines.len());
        for (i, (line, pm)) in lines.iter().zip(meta.pairs).enumerate() {
            let (inter, target) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, i + 1, "missing tab separator"))?;
            let tokens: Vec<IntermediateToken> = inter
                .split(' ')
                .filter(|s| !s.is_empty())
                .enumerate()
                .map(|(j, s)| IntermediateToken {
                    surface: s.to_string(),
                    provenance: if pm.passthrough.contains(&j) {
                        Provenance::Passthrough
                    } else {
                        Provenance::Translated
                    },
                })
                .collect();
            if tokens.len() != pm.source.len() {
                return Err(Error::parse(path, i + 1, "intermediate length differs from recorded source"));
            }
            pairs.push(DictPair {
                intermediate: IntermediateSequence {
                    tokens,
                    source: pm.source,
                },
                target: target.split(' ').filter(|s| !s.is_empty()).map(String::from).collect(),
                lang: pm.lang,
                index: pm.index,
            });
        }
        Ok((
            DictDataset {
                pairs,
                threshold_p: meta.threshold_p,
            },
            meta.seed,
        ))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    seed: u64,
    threshold_p: f64,
    size: usize,
    language_counts: BTreeMap<String, usize>,
    pairs: Vec<PairMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PairMeta {
    lang: String,
    index: usize,
    source: Vec<String>,
    passthrough: Vec<usize>,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// Translates every corpus with its own dictionary, keeps pairs with source
/// coverage `>= p`, and shuffles the union.
///
/// Each corpus gets a base seed drawn from `rng` in list order; sentence `k`
/// of that corpus is translated with a generator seeded from the base seed
/// and `k`, so the result does not depend on processing order.
pub fn create_dataset<R: Rng + ?Sized>(
    corpora: &[ParallelCorpus],
    dicts: &[BilingualDictionary],
    emb: &WordEmbeddings,
    p: f64,
    rng: &mut R,
) -> Result<DictDataset> {
    if corpora.len() != dicts.len() {
        return Err(Error::Config(format!(
            "{} corpora but {} dictionaries",
            corpora.len(),
            dicts.len()
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("coverage threshold {p} outside [0, 1]")));
    }
    for (c, d) in corpora.iter().zip(dicts) {
        if c.src_lang != d.source_lang() || c.tgt_lang != d.target_lang() {
            return Err(Error::Config(format!(
                "corpus {}-{} paired with dictionary {}-{}",
                c.src_lang,
                c.tgt_lang,
                d.source_lang(),
                d.target_lang()
            )));
        }
    }

    let mut pairs = Vec::new();
    for (c, d) in corpora.iter().zip(dicts) {
        let base = rng.gen::<u64>();
        let before = pairs.len();
        for (k, pair) in c.pairs.iter().enumerate() {
            if coverage(&pair.source, d)? < p {
                continue;
            }
            let mut sentence_rng = seed::rng(seed::item_seed(base, k));
            pairs.push(DictPair {
                intermediate: translate_sentence(&pair.source, d, emb, &mut sentence_rng),
                target: pair.target.clone(),
                lang: c.src_lang.clone(),
                index: k,
            });
        }
        info!(
            "{}-{}: {} of {} pairs reach coverage {p}",
            c.src_lang,
            c.tgt_lang,
            pairs.len() - before,
            c.len()
        );
    }
    pairs.shuffle(rng);
    Ok(DictDataset { pairs, threshold_p: p })
}

/// Seeded random split into `(train, test)` with
/// `|test| = round(test_fraction * |d|)`. Both halves keep dataset order.
pub fn split<R: Rng + ?Sized>(d: &DictDataset, test_fraction: f64, rng: &mut R) -> Result<(DictDataset, DictDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let n_test = (test_fraction * d.len() as f64).round() as usize;
    if n_test == 0 {
        return Err(Error::Config(format!(
            "test fraction {test_fraction} of {} pairs leaves no test pair",
            d.len()
        )));
    }
    if n_test >= d.len() {
        return Err(Error::Config(format!(
            "test fraction {test_fraction} of {} pairs leaves no training pair",
            d.len()
        )));
    }
    let mut is_test = vec![false; d.len()];
    for i in rand::seq::index::sample(rng, d.len(), n_test) {
        is_test[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (pair, t) in d.pairs.iter().zip(is_test) {
        if t {
            test.push(pair.clone());
        } else {
            train.push(pair.clone());
        }
    }
    Ok((
        DictDataset {
            pairs: train,
            threshold_p: d.threshold_p,
        },
        DictDataset {
            pairs: test,
            threshold_p: d.threshold_p,
        },
    ))
}

/// Subsamples `total` pairs spread equally over the corpora: each gets
/// `total / n`, and the first `total % n` corpora one extra. Sampled pairs
/// keep their corpus order.
pub fn sample_equal<R: Rng + ?Sized>(
    corpora: &[ParallelCorpus],
    total: usize,
    rng: &mut R,
) -> Result<Vec<ParallelCorpus>> {
    if corpora.is_empty() {
        return Err(Error::Config("sample_equal needs at least one corpus".into()));
    }
    let n = corpora.len();
    let quota = |i: usize| total / n + usize::from(i < total % n);
    for (i, c) in corpora.iter().enumerate() {
        if c.len() < quota(i) {
            return Err(Error::InvalidInput(format!(
                "corpus {}-{} has {} pairs, {} short of its quota {}",
                c.src_lang,
                c.tgt_lang,
                c.len(),
                quota(i) - c.len(),
                quota(i)
            )));
        }
    }
    Ok(corpora
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut idx = rand::seq::index::sample(rng, c.len(), quota(i)).into_vec();
            idx.sort_unstable();
            ParallelCorpus::new(
                c.src_lang.clone(),
                c.tgt_lang.clone(),
                idx.into_iter().map(|j| c.pairs[j].clone()).collect(),
            )
        })
        .collect())
}

/// Bucket edges for ascending `thresholds`: `0` is prepended when the first
/// threshold is above it and `1` appended when the last is below it.
pub fn coverage_edges(thresholds: &[f64]) -> Result<Vec<f64>> {
    if thresholds.is_empty() {
        return Err(Error::Config("no coverage thresholds".into()));
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("thresholds {thresholds:?} are not strictly ascending")));
    }
    if thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::Config(format!("thresholds {thresholds:?} outside [0, 1]")));
    }
    let mut edges = Vec::with_capacity(thresholds.len() + 2);
    if thresholds[0] > 0.0 {
        edges.push(0.0);
    }
    edges.extend_from_slice(thresholds);
    if *edges.last().expect("non-empty") < 1.0 {
        edges.push(1.0);
    }
    Ok(edges)
}

/// Pairs whose source coverage lies in `[lower, upper)`; the top bucket is
/// closed at 1.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageBucket {
    pub lower: f64,
    pub upper: f64,
    pub pairs: Vec<SentencePair>,
}

impl CoverageBucket {
    pub fn contains(&self, cov: f64) -> bool {
        cov >= self.lower && (cov < self.upper || (self.upper >= 1.0 && cov <= 1.0))
    }
}

/// Partitions a corpus by source coverage at the given ascending thresholds.
/// When the first threshold is above zero an extra `[0, t_0)` bucket comes
/// first so every pair lands somewhere.
pub fn bucket_by_coverage(
    c: &ParallelCorpus,
    dict: &BilingualDictionary,
    thresholds: &[f64],
) -> Result<Vec<CoverageBucket>> {
    let edges = coverage_edges(thresholds)?;
    let mut buckets: Vec<CoverageBucket> = edges
        .windows(2)
        .map(|w| CoverageBucket {
            lower: w[0],
            upper: w[1],
            pairs: Vec::new(),
        })
        .collect();
    for pair in &c.pairs {
        let cov = coverage(&pair.source, dict)?;
        let k = buckets
            .iter()
            .rposition(|b| cov >= b.lower)
            .expect("coverage is at least the lowest edge");
        buckets[k].pairs.push(pair.clone());
    }
    Ok(buckets)
}

/// For each threshold, how many pairs have coverage at least that high
/// (the cumulative view of [`bucket_by_coverage`]).
pub fn count_at_least(c: &ParallelCorpus, dict: &BilingualDictionary, thresholds: &[f64]) -> Result<Vec<usize>> {
    let covs = c
        .pairs
        .iter()
        .map(|p| coverage(&p.source, dict))
        .collect::<Result<Vec<_>>>()?;
    Ok(thresholds
        .iter()
        .map(|t| covs.iter().filter(|&&c| c >= *t).count())
        .collect())
}
