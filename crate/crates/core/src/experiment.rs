//! End-to-end runs.
//!
//! An [`ExperimentConfig`] names the languages, files and hyperparameters of
//! one run. [`build_dataset`], [`train_stage`] and [`evaluate_stage`] each
//! read their inputs from and write their outputs to a run directory, so the
//! CLI can execute them separately; [`run_pipeline`] chains all three.
//! [`sweep`] runs a grid of pipelines and collects one CSV row per cell.
//!
//! Every random choice draws from a generator derived from the master seed
//! and a stage name, so a run is reproduced by its config snapshot alone.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    coverage_edges, create_dataset, filter_by_length, load_parallel, sample_equal, split, DictDataset, DictPair,
    ParallelCorpus,
};
use crate::dictionary::{coverage, load_dictionary, load_embeddings, translate_sentence, BilingualDictionary, WordEmbeddings};
use crate::error::{read_to_string, Error, Result};
use crate::eval::{corpus_bleu, intermediate_baseline, BleuReport};
use crate::model::{
    encode_dataset, greedy_decode, init_model, load_checkpoint, save_checkpoint, train_examples, ModelParams,
    TrainingConfig, TrainingHistory, TransformerConfig,
};
use crate::seed;
use crate::synthetic::{SyntheticSpec, SyntheticWorld};
use crate::tokenizer::{decode_ids, encode, load_vocab, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Train and test on one source language.
    OneToOne,
    /// Train on several source languages, test on a language left out of
    /// training.
    ManyToOne,
}

/// Files for one source language. With a `synthetic` block in the config
/// only `code` is given and the files are generated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageSpec {
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_source: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_target: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<PathBuf>,
}

impl LanguageSpec {
    pub fn synthetic(code: &str) -> Self {
        LanguageSpec {
            code: code.into(),
            corpus_source: None,
            corpus_target: None,
            dictionary: None,
        }
    }

    fn paths(&self) -> Option<(&Path, &Path, &Path)> {
        Some((
            self.corpus_source.as_deref()?,
            self.corpus_target.as_deref()?,
            self.dictionary.as_deref()?,
        ))
    }
}

/// Test set size, either relative to the filtered pool or absolute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TestSpec {
    Fraction(f64),
    Size(usize),
}

fn default_target_lang() -> String {
    "en".into()
}
fn default_max_tokens() -> usize {
    80
}
fn default_min_count() -> usize {
    1
}
fn default_buckets() -> Vec<f64> {
    vec![0.5, 0.6, 0.7, 0.8]
}

/// One experiment. `training.seed` is ignored: the training seed is derived
/// from `seed` like every other stage seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Master seed.
    pub seed: u64,
    #[serde(default = "default_target_lang")]
    pub target_lang: String,
    pub train_languages: Vec<LanguageSpec>,
    /// Held-out language for [`Mode::ManyToOne`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_language: Option<LanguageSpec>,
    /// Target-language embeddings in text format.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    /// Minimum source dictionary coverage for a pair to be used.
    pub coverage_threshold: f64,
    /// Training pairs to keep; all survivors when absent.
    #[serde(default)]
    pub train_size: Option<usize>,
    pub test: TestSpec,
    /// Pairs with a longer side are dropped on load.
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    /// WordPiece vocabulary file; built from the training data when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<PathBuf>,
    #[serde(default = "default_min_count")]
    pub vocab_min_count: usize,
    /// Thresholds for the per-coverage breakdown of test scores.
    #[serde(default = "default_buckets")]
    pub coverage_buckets: Vec<f64>,
    /// Fraction of training pairs held out for validation loss.
    #[serde(default)]
    pub validation_fraction: Option<f64>,
    #[serde(default)]
    pub model: TransformerConfig,
    #[serde(default)]
    pub training: TrainingConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.train_languages.is_empty() {
            return fail("no training languages".into());
        }
        let codes: HashSet<&str> = self.train_languages.iter().map(|l| l.code.as_str()).collect();
        if codes.len() != self.train_languages.len() {
            return fail("duplicate training language".into());
        }
        match (self.mode, &self.test_language) {
            (Mode::OneToOne, None) if self.train_languages.len() == 1 => {}
            (Mode::OneToOne, _) => return fail("one_to_one takes exactly one training language and no test_language".into()),
            (Mode::ManyToOne, None) => return fail("many_to_one needs a test_language".into()),
            (Mode::ManyToOne, Some(t)) if codes.contains(t.code.as_str()) => {
                return fail(format!("test language {:?} is also a training language", t.code))
            }
            (Mode::ManyToOne, Some(_)) => {}
        }
        if !(0.0..=1.0).contains(&self.coverage_threshold) {
            return fail(format!("coverage_threshold {} outside [0, 1]", self.coverage_threshold));
        }
        match self.test {
            TestSpec::Fraction(f) if !(f > 0.0 && f < 1.0) => return fail(format!("test fraction {f} outside (0, 1)")),
            TestSpec::Size(0) => return fail("test size must be positive".into()),
            _ => {}
        }
        if let Some(f) = self.validation_fraction {
            if !(f > 0.0 && f < 1.0) {
                return fail(format!("validation_fraction {f} outside (0, 1)"));
            }
        }
        if self.train_size == Some(0) || self.max_tokens == 0 {
            return fail("train_size and max_tokens must be positive".into());
        }
        coverage_edges(&self.coverage_buckets)?;
        self.training.validate()?;
        let languages = self.train_languages.iter().chain(&self.test_language);
        match &self.synthetic {
            Some(spec) => {
                spec.validate()?;
                for l in languages {
                    if l.corpus_source.is_some() || l.corpus_target.is_some() || l.dictionary.is_some() {
                        return fail(format!("language {:?} gives file paths in a synthetic config", l.code));
                    }
                    if !spec.languages.iter().any(|s| s.code == l.code) {
                        return fail(format!("language {:?} is not in the synthetic spec", l.code));
                    }
                }
                if self.embeddings.is_some() {
                    return fail("embeddings are generated in a synthetic config".into());
                }
            }
            None => {
                for l in languages {
                    if l.paths().is_none() {
                        return fail(format!("language {:?} needs corpus_source, corpus_target and dictionary", l.code));
                    }
                }
                if self.embeddings.is_none() {
                    return fail("embeddings path missing".into());
                }
            }
        }
        Ok(())
    }

    /// Training languages joined with `+`, e.g. `a+b`.
    pub fn family_mix(&self) -> String {
        self.train_languages.iter().map(|l| l.code.as_str()).collect::<Vec<_>>().join("+")
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        for l in self.train_languages.iter_mut().chain(self.test_language.as_mut()) {
            fix(&mut l.corpus_source);
            fix(&mut l.corpus_target);
            fix(&mut l.dictionary);
        }
        fix(&mut self.embeddings);
        fix(&mut self.vocab);
    }
}

/// Reads a config; relative paths are taken relative to the config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let mut cfg: ExperimentConfig = serde_json::from_str(&read_to_string(path)?)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    cfg.validate()?;
    Ok(cfg)
}

/// Names of the files a run directory holds.
pub mod files {
    pub const CONFIG: &str = "config.json";
    pub const DATA_DIR: &str = "data";
    pub const INTERMEDIATE_SUFFIX: &str = ".intermediate.tsv";
    pub const TRAIN: &str = "train.tsv";
    pub const VALIDATION: &str = "validation.tsv";
    pub const TEST: &str = "test.tsv";
    pub const DATASET_SUMMARY: &str = "dataset.json";
    pub const VOCAB: &str = "vocab.txt";
    pub const CHECKPOINT: &str = "model.ckpt";
    pub const HISTORY: &str = "history.json";
    pub const HYPOTHESES: &str = "hypotheses.txt";
    pub const BLEU_MODEL: &str = "bleu_model.json";
    pub const BLEU_BASELINE: &str = "bleu_baseline.json";
    pub const BLEU_BY_COVERAGE: &str = "bleu_by_coverage.json";
    pub const TIMING: &str = "timing.json";
    pub const ARTIFACTS: &str = "artifacts.json";
    pub const INCOMPLETE: &str = "INCOMPLETE";
}

struct Language {
    corpus: ParallelCorpus,
    dict: BilingualDictionary,
}

struct Inputs {
    train: Vec<Language>,
    test: Option<Language>,
    embeddings: WordEmbeddings,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&read_to_string(path)?)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Loads (and for synthetic configs first generates) corpora, dictionaries
/// and embeddings.
fn load_inputs(cfg: &ExperimentConfig, out: &Path) -> Result<Inputs> {
    let mut specs: Vec<LanguageSpec> = cfg.train_languages.iter().chain(&cfg.test_language).cloned().collect();
    let emb_path = match &cfg.synthetic {
        Some(spec) => {
            let world = SyntheticWorld::new(spec)?;
            let written = world.materialize(out.join(files::DATA_DIR))?;
            for s in &mut specs {
                let f = written.languages.iter().find(|f| f.code == s.code).expect("validated");
                s.corpus_source = Some(f.corpus_source.clone());
                s.corpus_target = Some(f.corpus_target.clone());
                s.dictionary = Some(f.dictionary.clone());
            }
            written.embeddings
        }
        None => cfg.embeddings.clone().expect("validated"),
    };
    let embeddings = load_embeddings(&emb_path)?;
    let mut langs = Vec::new();
    for s in &specs {
        let (src, tgt, dict) = s.paths().expect("validated");
        let corpus = filter_by_length(&load_parallel(src, tgt, &s.code, &cfg.target_lang)?, cfg.max_tokens);
        let dict = load_dictionary(dict, &s.code, &cfg.target_lang)?;
        info!("{}: {} pairs, {} dictionary entries", s.code, corpus.len(), dict.len());
        langs.push(Language { corpus, dict });
    }
    let test = (cfg.test_language.is_some()).then(|| langs.pop().expect("test language loaded last"));
    Ok(Inputs {
        train: langs,
        test,
        embeddings,
    })
}

/// Word-to-word translation of every loaded corpus, one
/// `<code>.intermediate.tsv` per language with columns intermediate,
/// reference and coverage.
pub fn dict_translate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    create_dir(out)?;
    let inputs = load_inputs(cfg, out).map_err(|e| e.in_stage("load"))?;
    let mut written = Vec::new();
    for lang in inputs.train.iter().chain(&inputs.test) {
        let code = &lang.corpus.src_lang;
        let base = seed::derive_seed(cfg.seed, &format!("dict-translate/{code}"));
        let mut text = String::new();
        for (k, pair) in lang.corpus.pairs.iter().enumerate() {
            let t = translate_sentence(&pair.source, &lang.dict, &inputs.embeddings, &mut seed::rng(seed::item_seed(base, k)));
            let cov = coverage(&pair.source, &lang.dict).map_err(|e| e.in_stage("translate"))?;
            text.push_str(&format!("{t}\t{}\t{cov:.4}\n", pair.target.join(" ")));
        }
        let path = out.join(format!("{code}{}", files::INTERMEDIATE_SUFFIX));
        write_file(&path, text).map_err(|e| e.in_stage("write"))?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub mode: Mode,
    pub coverage_threshold: f64,
    pub family_mix: String,
    pub train_size: usize,
    pub validation_size: usize,
    pub test_size: usize,
    pub test_language: Option<String>,
    pub train_language_counts: BTreeMap<String, usize>,
    pub vocab_size: usize,
}

#[derive(Debug, Clone)]
pub struct DatasetArtifacts {
    pub train: DictDataset,
    pub validation: Option<DictDataset>,
    pub test: DictDataset,
    pub vocab: Vocabulary,
    pub summary: DatasetSummary,
}

fn keep_first(d: DictDataset, n: usize, what: &str) -> Result<DictDataset> {
    if d.len() < n {
        return Err(Error::InvalidInput(format!(
            "{what}: {n} pairs requested but only {} reach coverage {}",
            d.len(),
            d.threshold_p
        )));
    }
    Ok(DictDataset {
        pairs: d.pairs.into_iter().take(n).collect(),
        threshold_p: d.threshold_p,
    })
}

fn above_threshold(lang: &Language, p: f64) -> Result<ParallelCorpus> {
    let mut pairs = Vec::new();
    for pair in &lang.corpus.pairs {
        if coverage(&pair.source, &lang.dict)? >= p {
            pairs.push(pair.clone());
        }
    }
    Ok(ParallelCorpus::new(lang.corpus.src_lang.clone(), lang.corpus.tgt_lang.clone(), pairs))
}

/// Fails if any test sentence or the test language itself shows up in the
/// training data.
pub fn check_zero_shot(train: &DictDataset, test: &DictDataset) -> Result<()> {
    let test_langs: HashSet<&str> = test.pairs.iter().map(|p| p.lang.as_str()).collect();
    if let Some(p) = train.pairs.iter().find(|p| test_langs.contains(p.lang.as_str())) {
        return Err(Error::InvalidInput(format!(
            "training data holds sentence {} of test language {}",
            p.index, p.lang
        )));
    }
    let test_sources: HashSet<&[String]> = test.pairs.iter().map(|p| p.intermediate.source.as_slice()).collect();
    if let Some(p) = train.pairs.iter().find(|p| test_sources.contains(p.intermediate.source.as_slice())) {
        return Err(Error::InvalidInput(format!(
            "training sentence {} of {} also occurs in the test set",
            p.index, p.lang
        )));
    }
    Ok(())
}

fn select(cfg: &ExperimentConfig, inputs: &Inputs) -> Result<(DictDataset, DictDataset)> {
    let p = cfg.coverage_threshold;
    let emb = &inputs.embeddings;
    match cfg.mode {
        Mode::OneToOne => {
            let lang = &inputs.train[0];
            let pool = create_dataset(
                std::slice::from_ref(&lang.corpus),
                std::slice::from_ref(&lang.dict),
                emb,
                p,
                &mut seed::stage_rng(cfg.seed, "dataset"),
            )
            .map_err(|e| e.in_stage("create_dataset"))?;
            let fraction = match cfg.test {
                TestSpec::Fraction(f) => f,
                TestSpec::Size(n) => n as f64 / pool.len().max(1) as f64,
            };
            let (train, test) =
                split(&pool, fraction, &mut seed::stage_rng(cfg.seed, "split")).map_err(|e| e.in_stage("split"))?;
            let train = match cfg.train_size {
                Some(n) => keep_first(train, n, "training set").map_err(|e| e.in_stage("split"))?,
                None => train,
            };
            Ok((train, test))
        }
        Mode::ManyToOne => {
            let filtered = inputs
                .train
                .iter()
                .map(|l| above_threshold(l, p))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.in_stage("create_dataset"))?;
            let sampled = match cfg.train_size {
                Some(n) => sample_equal(&filtered, n, &mut seed::stage_rng(cfg.seed, "sample"))
                    .map_err(|e| e.in_stage("sample"))?,
                None => filtered,
            };
            let dicts: Vec<BilingualDictionary> = inputs.train.iter().map(|l| l.dict.clone()).collect();
            let train = create_dataset(&sampled, &dicts, emb, p, &mut seed::stage_rng(cfg.seed, "dataset"))
                .map_err(|e| e.in_stage("create_dataset"))?;
            let lang = inputs.test.as_ref().expect("validated");
            let pool = create_dataset(
                std::slice::from_ref(&lang.corpus),
                std::slice::from_ref(&lang.dict),
                emb,
                p,
                &mut seed::stage_rng(cfg.seed, "test"),
            )
            .map_err(|e| e.in_stage("create_dataset"))?;
            let n = match cfg.test {
                TestSpec::Size(n) => n,
                TestSpec::Fraction(f) => ((f * pool.len() as f64).round() as usize).max(1),
            };
            let test = keep_first(pool, n, "test set").map_err(|e| e.in_stage("split"))?;
            check_zero_shot(&train, &test).map_err(|e| e.in_stage("split"))?;
            Ok((train, test))
        }
    }
}

/// Builds the training, validation and test sets and the vocabulary, and
/// writes them to `out`.
pub fn build_dataset(cfg: &ExperimentConfig, out: &Path) -> Result<DatasetArtifacts> {
    create_dir(out)?;
    write_json(&out.join(files::CONFIG), cfg).map_err(|e| e.in_stage("write"))?;
    let inputs = load_inputs(cfg, out).map_err(|e| e.in_stage("load"))?;
    let (train, test) = select(cfg, &inputs)?;
    let (train, validation) = match cfg.validation_fraction {
        Some(f) => {
            let (t, v) =
                split(&train, f, &mut seed::stage_rng(cfg.seed, "validation")).map_err(|e| e.in_stage("split"))?;
            (t, Some(v))
        }
        None => (train, None),
    };
    let vocab = match &cfg.vocab {
        Some(path) => load_vocab(path),
        None => Ok(Vocabulary::build(
            train
                .pairs
                .iter()
                .flat_map(|p| p.intermediate.surfaces().into_iter().chain(p.target.iter().map(String::as_str))),
            cfg.vocab_min_count,
            true,
        )),
    }
    .map_err(|e| e.in_stage("tokenize"))?;
    let summary = DatasetSummary {
        mode: cfg.mode,
        coverage_threshold: cfg.coverage_threshold,
        family_mix: cfg.family_mix(),
        train_size: train.len(),
        validation_size: validation.as_ref().map_or(0, DictDataset::len),
        test_size: test.len(),
        test_language: cfg.test_language.as_ref().map(|l| l.code.clone()),
        train_language_counts: train.language_counts(),
        vocab_size: vocab.len(),
    };
    (|| {
        train.save(out.join(files::TRAIN), cfg.seed)?;
        test.save(out.join(files::TEST), cfg.seed)?;
        if let Some(v) = &validation {
            v.save(out.join(files::VALIDATION), cfg.seed)?;
        }
        vocab.save(out.join(files::VOCAB))?;
        write_json(&out.join(files::DATASET_SUMMARY), &summary)
    })()
    .map_err(|e| e.in_stage("write"))?;
    info!(
        "dataset: {} train, {} validation, {} test pairs, {} vocabulary entries",
        summary.train_size, summary.validation_size, summary.test_size, summary.vocab_size
    );
    Ok(DatasetArtifacts {
        train,
        validation,
        test,
        vocab,
        summary,
    })
}

fn require(out: &Path, name: &str, stage: &'static str, producer: &str) -> Result<PathBuf> {
    let path = out.join(name);
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::InvalidInput(format!("{} is missing; run `{producer}` first", path.display())).in_stage(stage))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub train_seconds: f64,
    pub epoch_seconds: Vec<f64>,
}

/// Trains on the datasets in `out` and writes the checkpoint and history.
pub fn train_stage(cfg: &ExperimentConfig, out: &Path) -> Result<(ModelParams, TrainingHistory)> {
    let stage = "train";
    let (train, _) = DictDataset::load(require(out, files::TRAIN, stage, "build-dataset")?).map_err(|e| e.in_stage(stage))?;
    let vocab = load_vocab(require(out, files::VOCAB, stage, "build-dataset")?).map_err(|e| e.in_stage(stage))?;
    let validation = match out.join(files::VALIDATION) {
        p if p.exists() => Some(DictDataset::load(p).map_err(|e| e.in_stage(stage))?.0),
        _ => None,
    };
    let model_cfg = cfg.model.clone().with_vocab(&vocab);
    let init_seed = seed::derive_seed(cfg.seed, "init");
    let params = init_model(&model_cfg, init_seed).map_err(|e| e.in_stage(stage))?;
    let tcfg = TrainingConfig {
        seed: seed::derive_seed(cfg.seed, "train"),
        ..cfg.training.clone()
    };
    let start = Instant::now();
    let validation = validation.map(|v| encode_dataset(&v, &vocab));
    let (params, history) = train_examples(params, &encode_dataset(&train, &vocab), validation.as_deref(), &tcfg)
        .map_err(|e| e.in_stage(stage))?;
    let timing = Timing {
        train_seconds: start.elapsed().as_secs_f64(),
        epoch_seconds: history.epoch_seconds.clone(),
    };
    (|| {
        save_checkpoint(out.join(files::CHECKPOINT), &params, init_seed, history.epochs())?;
        write_json(&out.join(files::HISTORY), &history)?;
        write_json(&out.join(files::TIMING), &timing)
    })()
    .map_err(|e| e.in_stage("write"))?;
    Ok((params, history))
}

/// Model and baseline scores on the test pairs whose coverage falls in
/// `[lower, upper)` (the top bucket includes 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageScore {
    pub lower: f64,
    pub upper: f64,
    pub pairs: usize,
    pub model_bleu: Option<f64>,
    pub baseline_bleu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalArtifacts {
    pub model: BleuReport,
    pub baseline: BleuReport,
    pub by_coverage: Vec<CoverageScore>,
}

/// Fraction of a pair's source tokens that the dictionary translated.
pub fn pair_coverage(p: &DictPair) -> f64 {
    p.intermediate.translated_count() as f64 / p.intermediate.len().max(1) as f64
}

/// Greedy translation of intermediate sequences into detokenized target text.
pub fn translate_intermediates(params: &ModelParams, vocab: &Vocabulary, pairs: &[DictPair]) -> Result<Vec<String>> {
    let limit = params.config.max_seq_len;
    pairs
        .iter()
        .map(|p| {
            let mut src = encode(&p.intermediate.surfaces(), vocab).ids;
            if src.len() > limit {
                warn!("truncating a {}-token source to {limit}", src.len());
                src.truncate(limit - 1);
                src.push(vocab.eos_id());
            }
            let ids = greedy_decode(params, &src, 2 * src.len() + 10)?;
            decode_ids(&ids, vocab)
        })
        .collect()
}

/// Decodes the test set in `out` with the trained model and scores it next
/// to the word-for-word baseline.
pub fn evaluate_stage(cfg: &ExperimentConfig, out: &Path) -> Result<EvalArtifacts> {
    let stage = "evaluate";
    let (test, _) = DictDataset::load(require(out, files::TEST, stage, "build-dataset")?).map_err(|e| e.in_stage(stage))?;
    let vocab = load_vocab(require(out, files::VOCAB, stage, "build-dataset")?).map_err(|e| e.in_stage(stage))?;
    let (params, _) = load_checkpoint(require(out, files::CHECKPOINT, stage, "train")?).map_err(|e| e.in_stage(stage))?;
    if params.config.vocab_size != vocab.len() {
        return Err(Error::Vocab(format!(
            "checkpoint expects {} tokens, vocabulary has {}",
            params.config.vocab_size,
            vocab.len()
        ))
        .in_stage(stage));
    }
    let hyps = translate_intermediates(&params, &vocab, &test.pairs).map_err(|e| e.in_stage("decode"))?;
    let refs: Vec<String> = test.pairs.iter().map(|p| p.target.join(" ")).collect();
    let score = || -> Result<EvalArtifacts> {
        let model = corpus_bleu(&hyps, &refs)?;
        let baseline = intermediate_baseline(&test)?;
        let edges = coverage_edges(&cfg.coverage_buckets)?;
        let covs: Vec<f64> = test.pairs.iter().map(pair_coverage).collect();
        let mut by_coverage = Vec::new();
        for (k, w) in edges.windows(2).enumerate() {
            let top = k + 2 == edges.len();
            let idx: Vec<usize> = (0..covs.len())
                .filter(|&i| covs[i] >= w[0] && (covs[i] < w[1] || (top && covs[i] <= 1.0)))
                .collect();
            let (model_bleu, baseline_bleu) = if idx.is_empty() {
                (None, None)
            } else {
                let h: Vec<&str> = idx.iter().map(|&i| hyps[i].as_str()).collect();
                let r: Vec<&str> = idx.iter().map(|&i| refs[i].as_str()).collect();
                let b: Vec<String> = idx.iter().map(|&i| test.pairs[i].intermediate.to_string()).collect();
                (Some(corpus_bleu(&h, &r)?.bleu), Some(corpus_bleu(&b, &r)?.bleu))
            };
            by_coverage.push(CoverageScore {
                lower: w[0],
                upper: w[1],
                pairs: idx.len(),
                model_bleu,
                baseline_bleu,
            });
        }
        Ok(EvalArtifacts {
            model,
            baseline,
            by_coverage,
        })
    };
    let eval = score().map_err(|e| e.in_stage("score"))?;
    (|| {
        write_file(&out.join(files::HYPOTHESES), hyps.iter().map(|h| format!("{h}\n")).collect::<String>())?;
        write_json(&out.join(files::BLEU_MODEL), &eval.model)?;
        write_json(&out.join(files::BLEU_BASELINE), &eval.baseline)?;
        write_json(&out.join(files::BLEU_BY_COVERAGE), &eval.by_coverage)
    })()
    .map_err(|e| e.in_stage("write"))?;
    info!(
        "BLEU: model {} vs word-for-word {}",
        eval.model.display_score(),
        eval.baseline.display_score()
    );
    Ok(eval)
}

/// Everything a finished run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub dataset: DatasetSummary,
    pub checkpoint: PathBuf,
    pub history: TrainingHistory,
    pub model_bleu: BleuReport,
    pub baseline_bleu: BleuReport,
    pub by_coverage: Vec<CoverageScore>,
    pub config: ExperimentConfig,
}

/// Dataset, training and evaluation in one go. On failure an `INCOMPLETE`
/// file naming the error is left in `out`.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<RunArtifacts> {
    let run = || -> Result<RunArtifacts> {
        cfg.validate().map_err(|e| e.in_stage("config"))?;
        let marker = out.join(files::INCOMPLETE);
        if marker.exists() {
            fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
        }
        let data = build_dataset(cfg, out)?;
        let (_, history) = train_stage(cfg, out)?;
        let eval = evaluate_stage(cfg, out)?;
        let artifacts = RunArtifacts {
            dataset: data.summary,
            checkpoint: PathBuf::from(files::CHECKPOINT),
            history,
            model_bleu: eval.model,
            baseline_bleu: eval.baseline,
            by_coverage: eval.by_coverage,
            config: cfg.clone(),
        };
        write_json(&out.join(files::ARTIFACTS), &artifacts).map_err(|e| e.in_stage("write"))?;
        Ok(artifacts)
    };
    run().inspect_err(|e| {
        if create_dir(out).is_ok() {
            let _ = fs::write(out.join(files::INCOMPLETE), format!("{e}\n"));
        }
    })
}

/// Reads the config snapshot a run stored in its directory.
pub fn load_snapshot(run_dir: &Path) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = read_json(&run_dir.join(files::CONFIG))?;
    cfg.validate()?;
    Ok(cfg)
}

/// A grid of runs around a base config. Every combination of size,
/// coverage threshold, family mix and seed is one training run; each run is
/// scored on the whole test set and on every test coverage bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: ExperimentConfig,
    /// Training set sizes; the base size when empty.
    #[serde(default)]
    pub sizes: Vec<usize>,
    /// Training coverage thresholds; the base threshold when empty.
    #[serde(default)]
    pub coverage_thresholds: Vec<f64>,
    /// Training language sets (codes); the base languages when empty.
    #[serde(default)]
    pub family_mixes: Vec<Vec<String>>,
    /// Master seeds; the base seed when empty.
    #[serde(default)]
    pub seeds: Vec<u64>,
}

/// One training run of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub index: usize,
    pub config: ExperimentConfig,
}

impl SweepConfig {
    pub fn cells(&self) -> Result<Vec<SweepCell>> {
        let or_base = |v: &[usize], b: Option<usize>| if v.is_empty() { vec![b] } else { v.iter().map(|&x| Some(x)).collect() };
        let sizes = or_base(&self.sizes, self.base.train_size);
        let ps = if self.coverage_thresholds.is_empty() {
            vec![self.base.coverage_threshold]
        } else {
            self.coverage_thresholds.clone()
        };
        let mixes: Vec<Vec<LanguageSpec>> = if self.family_mixes.is_empty() {
            vec![self.base.train_languages.clone()]
        } else {
            self.family_mixes
                .iter()
                .map(|mix| {
                    mix.iter()
                        .map(|code| {
                            self.base
                                .train_languages
                                .iter()
                                .find(|l| &l.code == code)
                                .cloned()
                                .or_else(|| self.base.synthetic.as_ref().map(|_| LanguageSpec::synthetic(code)))
                                .ok_or_else(|| Error::Config(format!("family mix names unknown language {code:?}")))
                        })
                        .collect()
                })
                .collect::<Result<_>>()?
        };
        let seeds = if self.seeds.is_empty() { vec![self.base.seed] } else { self.seeds.clone() };
        let mut cells = Vec::new();
        for &size in &sizes {
            for &p in &ps {
                for mix in &mixes {
                    for &s in &seeds {
                        let config = ExperimentConfig {
                            train_size: size,
                            coverage_threshold: p,
                            train_languages: mix.clone(),
                            seed: s,
                            ..self.base.clone()
                        };
                        config.validate()?;
                        cells.push(SweepCell {
                            index: cells.len(),
                            config,
                        });
                    }
                }
            }
        }
        if cells.is_empty() {
            return Err(Error::Config("empty sweep grid".into()));
        }
        Ok(cells)
    }
}

pub fn load_sweep_config(path: impl AsRef<Path>) -> Result<SweepConfig> {
    let path = path.as_ref();
    let mut cfg: SweepConfig = serde_json::from_str(&read_to_string(path)?)?;
    cfg.base.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    cfg.cells()?;
    Ok(cfg)
}

/// One CSV row: a training run scored on one slice of its test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: usize,
    pub train_size: Option<usize>,
    pub coverage_threshold: f64,
    pub family_mix: String,
    pub test_language: String,
    pub seed: u64,
    /// `all`, or the bucket as `[lower,upper)`.
    pub test_coverage: String,
    pub test_pairs: usize,
    pub model_bleu: Option<f64>,
    pub baseline_bleu: Option<f64>,
    pub runtime_seconds: f64,
    pub error: String,
}

/// CSV header of [`sweep`] output, in column order.
pub const SWEEP_COLUMNS: [&str; 12] = [
    "cell",
    "train_size",
    "coverage_threshold",
    "family_mix",
    "test_language",
    "seed",
    "test_coverage",
    "test_pairs",
    "model_bleu",
    "baseline_bleu",
    "runtime_seconds",
    "error",
];

fn bucket_label(lower: f64, upper: f64) -> String {
    if upper >= 1.0 {
        format!("[{lower:.2},{upper:.2}]")
    } else {
        format!("[{lower:.2},{upper:.2})")
    }
}

/// Runs every cell under `out/cell-<index>` and writes `out/sweep.csv`. A
/// failing cell becomes a row with the error filled in; the sweep goes on.
pub fn sweep(grid: &SweepConfig, out: &Path) -> Result<Vec<SweepRow>> {
    create_dir(out)?;
    let cells = grid.cells()?;
    let mut rows = Vec::new();
    for cell in &cells {
        info!("sweep cell {}/{}", cell.index + 1, cells.len());
        let cfg = &cell.config;
        let row = |test_coverage: String, test_pairs, model_bleu, baseline_bleu, runtime_seconds, error: String| SweepRow {
            cell: cell.index,
            train_size: cfg.train_size,
            coverage_threshold: cfg.coverage_threshold,
            family_mix: cfg.family_mix(),
            test_language: cfg
                .test_language
                .as_ref()
                .map_or_else(|| cfg.train_languages[0].code.clone(), |l| l.code.clone()),
            seed: cfg.seed,
            test_coverage,
            test_pairs,
            model_bleu,
            baseline_bleu,
            runtime_seconds,
            error,
        };
        let start = Instant::now();
        match run_pipeline(cfg, &out.join(format!("cell-{}", cell.index))) {
            Ok(a) => {
                let secs = start.elapsed().as_secs_f64();
                rows.push(row(
                    "all".into(),
                    a.dataset.test_size,
                    Some(a.model_bleu.bleu),
                    Some(a.baseline_bleu.bleu),
                    secs,
                    String::new(),
                ));
                for b in &a.by_coverage {
                    rows.push(row(
                        bucket_label(b.lower, b.upper),
                        b.pairs,
                        b.model_bleu,
                        b.baseline_bleu,
                        secs,
                        String::new(),
                    ));
                }
            }
            Err(e) => {
                warn!("sweep cell {} failed: {e}", cell.index);
                rows.push(row("all".into(), 0, None, None, start.elapsed().as_secs_f64(), e.to_string()));
            }
        }
    }
    let path = out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}
