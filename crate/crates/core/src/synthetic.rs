//! Synthetic language families.
//!
//! A small English-like target language is generated from topic-clustered
//! word lists: a few hand-picked frequent words per topic and part of speech,
//! followed by a long tail of invented rare words, drawn with Zipfian
//! frequencies. Each source language is a deterministic respelling of the
//! target lexicon plus a handful of word-order rules, an optional
//! untranslatable particle, and a partly polysemous dictionary that covers
//! every frequent word but misses some of the rare ones, as induced
//! dictionaries tend to.
//! Target embeddings cluster by topic, so nearest-anchor polysemy
//! resolution works most of the time but not always.
//!
//! [`SyntheticWorld::materialize`] writes everything in the ordinary file
//! formats, so the loaders see synthetic data exactly as they would see real
//! corpora, dictionaries and embeddings.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ParallelCorpus, SentencePair};
use crate::dictionary::{BilingualDictionary, WordEmbeddings};
use crate::error::{Error, Result};
use crate::seed;

/// Target language code used by every synthetic world.
pub const TARGET_LANG: &str = "en";

struct Topic {
    nouns: [&'static str; 10],
    adjectives: [&'static str; 6],
    verbs: [&'static str; 6],
}

const TOPICS: [Topic; 6] = [
    Topic {
        nouns: ["dog", "cat", "horse", "bird", "fish", "cow", "sheep", "goat", "mouse", "wolf"],
        adjectives: ["wild", "tame", "furry", "hungry", "small", "loud"],
        verbs: ["feeds", "chases", "watches", "follows", "hears", "bites"],
    },
    Topic {
        nouns: ["bread", "soup", "knife", "plate", "cup", "oven", "spoon", "apple", "cheese", "kettle"],
        adjectives: ["hot", "fresh", "sweet", "sour", "clean", "sharp"],
        verbs: ["cooks", "cuts", "washes", "bakes", "fills", "tastes"],
    },
    Topic {
        nouns: ["car", "bus", "street", "bridge", "tower", "shop", "train", "market", "road", "station"],
        adjectives: ["busy", "old", "tall", "noisy", "modern", "narrow"],
        verbs: ["builds", "drives", "crosses", "paints", "visits", "sells"],
    },
    Topic {
        nouns: ["book", "pen", "teacher", "student", "lesson", "desk", "map", "letter", "poem", "exam"],
        adjectives: ["clever", "long", "short", "boring", "easy", "hard"],
        verbs: ["reads", "writes", "teaches", "studies", "checks", "copies"],
    },
    Topic {
        nouns: ["boat", "ship", "wave", "shell", "sailor", "harbor", "island", "net", "anchor", "whale"],
        adjectives: ["blue", "deep", "calm", "salty", "wide", "stormy"],
        verbs: ["sails", "pulls", "rows", "catches", "throws", "finds"],
    },
    Topic {
        nouns: ["tree", "flower", "seed", "leaf", "rose", "grass", "fence", "hedge", "lawn", "bee"],
        adjectives: ["green", "bright", "dry", "wet", "young", "lush"],
        verbs: ["plants", "waters", "grows", "picks", "trims", "digs"],
    },
];

const DETERMINERS: [&str; 2] = ["the", "a"];
const PREPOSITIONS: [&str; 5] = ["in", "on", "with", "near", "under"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Pos {
    Noun,
    Adjective,
    Verb,
    Function,
}

/// Word-order and function-word rules that set a source language apart
/// from the target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageRules {
    pub code: String,
    /// "the red car" becomes "the car red".
    #[serde(default)]
    pub adjective_after_noun: bool,
    /// Subject, object, verb instead of subject, verb, object.
    #[serde(default)]
    pub verb_final: bool,
    /// Articles are omitted from the source.
    #[serde(default)]
    pub drop_articles: bool,
    /// A particle with no dictionary entry follows the subject.
    #[serde(default)]
    pub subject_particle: bool,
    /// The prepositional phrase moves to the front of the sentence.
    #[serde(default)]
    pub fronted_prepositional_phrase: bool,
}

impl LanguageRules {
    pub fn new(code: &str) -> Self {
        LanguageRules {
            code: code.to_string(),
            adjective_after_noun: false,
            verb_final: false,
            drop_articles: false,
            subject_particle: false,
            fronted_prepositional_phrase: false,
        }
    }

    /// Compact description such as `adj-after-noun+verb-final`.
    pub fn family(&self) -> String {
        let flags = [
            (self.adjective_after_noun, "adj-after-noun"),
            (self.verb_final, "verb-final"),
            (self.drop_articles, "no-articles"),
            (self.subject_particle, "subject-particle"),
            (self.fronted_prepositional_phrase, "pp-first"),
        ];
        let names: Vec<&str> = flags.iter().filter(|(on, _)| *on).map(|(_, n)| *n).collect();
        if names.is_empty() {
            "target-order".into()
        } else {
            names.join("+")
        }
    }
}

fn default_polysemy_rate() -> f64 {
    0.2
}
fn default_missing_rate() -> f64 {
    0.5
}
fn default_topic_focus() -> f64 {
    0.85
}
fn default_embedding_dim() -> usize {
    32
}
fn default_sentences() -> usize {
    4000
}
fn default_rare_words() -> usize {
    100
}

/// Parameters of a synthetic world. Everything generated from it is a pure
/// function of these fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub languages: Vec<LanguageRules>,
    /// Parallel sentences generated per language.
    #[serde(default = "default_sentences")]
    pub sentences_per_language: usize,
    /// Fraction of dictionary entries given a second, wrong candidate.
    #[serde(default = "default_polysemy_rate")]
    pub polysemy_rate: f64,
    /// Fraction of rare words left out of each dictionary. Frequent words
    /// always have an entry.
    #[serde(default = "default_missing_rate")]
    pub missing_rate: f64,
    /// Probability that a content word comes from the sentence's topic.
    #[serde(default = "default_topic_focus")]
    pub topic_focus: f64,
    /// Invented rare nouns per topic; adjectives and verbs get half as many.
    #[serde(default = "default_rare_words")]
    pub rare_words: usize,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
}

impl SyntheticSpec {
    /// Three languages: `a` puts adjectives after nouns and prepositional
    /// phrases first, `b` is verb-final without articles and marks subjects
    /// with a particle, and `c` combines `a`'s adjective order with `b`'s
    /// verb position.
    pub fn three_families(seed: u64) -> Self {
        let a = LanguageRules {
            adjective_after_noun: true,
            fronted_prepositional_phrase: true,
            ..LanguageRules::new("a")
        };
        let b = LanguageRules {
            verb_final: true,
            drop_articles: true,
            subject_particle: true,
            ..LanguageRules::new("b")
        };
        let c = LanguageRules {
            adjective_after_noun: true,
            verb_final: true,
            ..LanguageRules::new("c")
        };
        SyntheticSpec {
            seed,
            languages: vec![a, b, c],
            sentences_per_language: default_sentences(),
            polysemy_rate: default_polysemy_rate(),
            missing_rate: default_missing_rate(),
            topic_focus: default_topic_focus(),
            rare_words: default_rare_words(),
            embedding_dim: default_embedding_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut codes = HashSet::new();
        for l in &self.languages {
            if l.code.is_empty() || l.code == TARGET_LANG || !codes.insert(l.code.as_str()) {
                return Err(Error::Config(format!("bad or duplicate synthetic language code {:?}", l.code)));
            }
        }
        for (name, v) in [
            ("polysemy_rate", self.polysemy_rate),
            ("missing_rate", self.missing_rate),
            ("topic_focus", self.topic_focus),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if self.languages.is_empty() || self.sentences_per_language == 0 || self.embedding_dim == 0 {
            return Err(Error::Config("synthetic spec needs languages, sentences and an embedding size".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Word {
    text: String,
    pos: Pos,
    topic: Option<usize>,
    rare: bool,
}

// Word fields are indices into `SyntheticWorld::words`.
#[derive(Debug, Clone)]
struct NounPhrase {
    det: usize,
    adj: Option<usize>,
    noun: usize,
}

#[derive(Debug, Clone)]
struct Clause {
    subject: NounPhrase,
    verb: usize,
    object: Option<NounPhrase>,
    pp: Option<(usize, NounPhrase)>,
}

impl NounPhrase {
    fn push(&self, out: &mut Vec<usize>) {
        out.push(self.det);
        out.extend(self.adj);
        out.push(self.noun);
    }
}

impl Clause {
    fn target(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.subject.push(&mut out);
        out.push(self.verb);
        if let Some(o) = &self.object {
            o.push(&mut out);
        }
        if let Some((prep, np)) = &self.pp {
            out.push(*prep);
            np.push(&mut out);
        }
        out
    }
}

/// One generated source language: spelling, dictionary and rules.
#[derive(Debug, Clone)]
pub struct SyntheticLanguage {
    pub rules: LanguageRules,
    /// Source spelling of each target word, by word index.
    forms: Vec<String>,
    index: HashMap<String, usize>,
    particle: String,
    dictionary: BilingualDictionary,
}

impl SyntheticLanguage {
    pub fn code(&self) -> &str {
        &self.rules.code
    }

    pub fn dictionary(&self) -> &BilingualDictionary {
        &self.dictionary
    }

    /// Source spelling of a target word.
    pub fn form(&self, target_word: &str) -> Option<&str> {
        self.index.get(target_word).map(|&i| self.forms[i].as_str())
    }

    /// The subject marker. It never has a dictionary entry and only appears
    /// in languages with `subject_particle`.
    pub fn particle(&self) -> &str {
        &self.particle
    }

    fn render_np(&self, np: &NounPhrase, out: &mut Vec<String>) {
        if !self.rules.drop_articles {
            out.push(self.forms[np.det].clone());
        }
        match (np.adj, self.rules.adjective_after_noun) {
            (Some(a), true) => {
                out.push(self.forms[np.noun].clone());
                out.push(self.forms[a].clone());
            }
            (Some(a), false) => {
                out.push(self.forms[a].clone());
                out.push(self.forms[np.noun].clone());
            }
            (None, _) => out.push(self.forms[np.noun].clone()),
        }
    }

    fn render(&self, c: &Clause) -> Vec<String> {
        let mut out = Vec::new();
        let pp = |out: &mut Vec<String>| {
            if let Some((prep, np)) = &c.pp {
                out.push(self.forms[*prep].clone());
                self.render_np(np, out);
            }
        };
        if self.rules.fronted_prepositional_phrase {
            pp(&mut out);
        }
        self.render_np(&c.subject, &mut out);
        if self.rules.subject_particle {
            out.push(self.particle.clone());
        }
        if !self.rules.verb_final {
            out.push(self.forms[c.verb].clone());
        }
        if let Some(o) = &c.object {
            self.render_np(o, &mut out);
        }
        if !self.rules.fronted_prepositional_phrase {
            pp(&mut out);
        }
        if self.rules.verb_final {
            out.push(self.forms[c.verb].clone());
        }
        out.push(".".into());
        out
    }
}

/// Paths written by [`SyntheticWorld::materialize`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageFiles {
    pub code: String,
    pub corpus_source: PathBuf,
    pub corpus_target: PathBuf,
    pub dictionary: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldFiles {
    pub embeddings: PathBuf,
    pub languages: Vec<LanguageFiles>,
}

/// Words of one topic and part of speech, most frequent first.
#[derive(Debug, Clone)]
struct Slot {
    words: Vec<usize>,
    zipf: WeightedIndex<f64>,
}

impl Slot {
    fn new(words: Vec<usize>) -> Self {
        let zipf = WeightedIndex::new((1..=words.len()).map(|r| 1.0 / r as f64)).expect("non-empty slot");
        Slot { words, zipf }
    }

    fn sample(&self, rng: &mut seed::Rng) -> usize {
        self.words[self.zipf.sample(rng)]
    }
}

/// A generated target language together with its source languages.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub spec: SyntheticSpec,
    words: Vec<Word>,
    /// Noun, adjective and verb slots per topic.
    slots: Vec<[Slot; 3]>,
    determiners: Vec<usize>,
    prepositions: Vec<usize>,
    embeddings: WordEmbeddings,
    languages: Vec<SyntheticLanguage>,
}

struct Phonotactics {
    onsets: &'static [&'static str],
    vowels: &'static [&'static str],
    codas: &'static [&'static str],
}

const TARGET_SOUNDS: Phonotactics = Phonotactics {
    onsets: &["b", "br", "c", "cl", "d", "dr", "f", "fl", "g", "gr", "h", "l", "m", "n", "p", "pl", "r", "s", "sp", "st", "t", "tr", "w"],
    vowels: &["a", "e", "i", "o", "u", "ee", "oo", "ai"],
    codas: &["", "n", "t", "d", "ck", "ll", "sh", "st"],
};

const SOURCE_CODAS: &[&str] = &["", "", "n", "r", "s", "k"];
const SOURCE_SOUNDS: [Phonotactics; 4] = [
    Phonotactics {
        onsets: &["b", "d", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"],
        vowels: &["a", "e", "i", "o", "u"],
        codas: SOURCE_CODAS,
    },
    Phonotactics {
        onsets: &["f", "h", "j", "k", "l", "m", "n", "r", "s", "sh", "t", "y"],
        vowels: &["a", "ai", "e", "i", "o", "u"],
        codas: SOURCE_CODAS,
    },
    Phonotactics {
        onsets: &["b", "ch", "d", "g", "kr", "l", "m", "n", "p", "r", "st", "tr", "v"],
        vowels: &["a", "e", "ia", "o", "u"],
        codas: SOURCE_CODAS,
    },
    Phonotactics {
        onsets: &["dr", "g", "k", "l", "m", "n", "ph", "r", "s", "th", "v", "w"],
        vowels: &["a", "e", "i", "oa", "u", "y"],
        codas: SOURCE_CODAS,
    },
];

impl Phonotactics {
    fn invent(&self, rng: &mut seed::Rng) -> String {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for i in 0..syllables {
            w.push_str(self.onsets.choose(rng).expect("non-empty"));
            w.push_str(self.vowels.choose(rng).expect("non-empty"));
            if i + 1 == syllables {
                w.push_str(self.codas.choose(rng).expect("non-empty"));
            }
        }
        w
    }

    /// An invented word (plus `suffix`) not yet in `taken`.
    fn fresh(&self, rng: &mut seed::Rng, suffix: &str, taken: &mut HashSet<String>) -> String {
        loop {
            let w = self.invent(rng) + suffix;
            if taken.insert(w.clone()) {
                return w;
            }
        }
    }
}

fn uniform_vector(rng: &mut seed::Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn build_embeddings(words: &[Word], dim: usize, rng: &mut seed::Rng) -> WordEmbeddings {
    let topics: Vec<Vec<f64>> = (0..TOPICS.len()).map(|_| uniform_vector(rng, dim, 1.0)).collect();
    let parts: HashMap<Pos, Vec<f64>> = [Pos::Noun, Pos::Adjective, Pos::Verb, Pos::Function]
        .into_iter()
        .map(|p| (p, uniform_vector(rng, dim, 1.0)))
        .collect();
    let mut emb = WordEmbeddings::new(dim);
    for w in words {
        let noise = uniform_vector(rng, dim, 0.6);
        let v: Vec<f64> = (0..dim)
            .map(|i| {
                let topic = w.topic.map_or(0.0, |t| topics[t][i]);
                topic + 0.4 * parts[&w.pos][i] + noise[i]
            })
            .collect();
        emb.insert(w.text.clone(), v).expect("dimension matches");
    }
    emb
}

/// Hand-picked words first, then invented rare words, per topic and part
/// of speech.
fn build_lexicon(spec: &SyntheticSpec) -> (Vec<Word>, Vec<[Slot; 3]>) {
    let mut taken: HashSet<String> = TOPICS
        .iter()
        .flat_map(|t| t.nouns.iter().chain(&t.adjectives).chain(&t.verbs))
        .chain(DETERMINERS.iter().chain(&PREPOSITIONS))
        .map(|w| w.to_string())
        .collect();
    let mut rng = seed::stage_rng(spec.seed, "lexicon");
    let mut words = Vec::new();
    let mut slots = Vec::new();
    for (t, topic) in TOPICS.iter().enumerate() {
        let groups: [(&[&'static str], Pos, usize, &str); 3] = [
            (&topic.nouns, Pos::Noun, spec.rare_words, ""),
            (&topic.adjectives, Pos::Adjective, spec.rare_words / 2, ""),
            (&topic.verbs, Pos::Verb, spec.rare_words / 2, "s"),
        ];
        let slot = groups.map(|(heads, pos, rare, suffix)| {
            let mut ids = Vec::new();
            let texts = heads
                .iter()
                .map(|w| w.to_string())
                .chain((0..rare).map(|_| TARGET_SOUNDS.fresh(&mut rng, suffix, &mut taken)))
                .collect::<Vec<_>>();
            for (rank, text) in texts.into_iter().enumerate() {
                ids.push(words.len());
                words.push(Word {
                    text,
                    pos,
                    topic: Some(t),
                    rare: rank >= heads.len(),
                });
            }
            Slot::new(ids)
        });
        slots.push(slot);
    }
    for text in DETERMINERS.iter().chain(&PREPOSITIONS) {
        words.push(Word {
            text: text.to_string(),
            pos: Pos::Function,
            topic: None,
            rare: false,
        });
    }
    (words, slots)
}

impl SyntheticWorld {
    pub fn new(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let (words, slots) = build_lexicon(spec);
        let find = |list: &[&str]| -> Vec<usize> {
            list.iter().map(|f| words.iter().position(|w| w.text == *f).expect("function word")).collect()
        };
        let (determiners, prepositions) = (find(&DETERMINERS), find(&PREPOSITIONS));
        let embeddings = build_embeddings(&words, spec.embedding_dim, &mut seed::stage_rng(spec.seed, "embeddings"));
        let index: HashMap<String, usize> = words.iter().enumerate().map(|(i, w)| (w.text.clone(), i)).collect();

        let mut taken: HashSet<String> = index.keys().cloned().collect();
        let mut languages = Vec::new();
        for (li, rules) in spec.languages.iter().enumerate() {
            let mut rng = seed::stage_rng(spec.seed, &format!("language/{}", rules.code));
            let sounds = &SOURCE_SOUNDS[li % SOURCE_SOUNDS.len()];
            let forms: Vec<String> = words.iter().map(|_| sounds.fresh(&mut rng, "", &mut taken)).collect();
            let particle = sounds.fresh(&mut rng, "", &mut taken);
            let mut dictionary = BilingualDictionary::new(rules.code.clone(), TARGET_LANG);
            for (i, w) in words.iter().enumerate() {
                let content = w.pos != Pos::Function;
                if w.rare && rng.gen_bool(spec.missing_rate) {
                    continue;
                }
                let src = &forms[i];
                let distractor = (content && rng.gen_bool(spec.polysemy_rate)).then(|| {
                    let rivals: Vec<&Word> = words.iter().filter(|o| o.pos == w.pos && o.topic != w.topic).collect();
                    rivals.choose(&mut rng).expect("other topics exist").text.as_str()
                });
                match distractor {
                    Some(d) if rng.gen_bool(0.5) => {
                        dictionary.insert(src, d);
                        dictionary.insert(src, &w.text);
                    }
                    Some(d) => {
                        dictionary.insert(src, &w.text);
                        dictionary.insert(src, d);
                    }
                    None => {
                        dictionary.insert(src, &w.text);
                    }
                }
            }
            languages.push(SyntheticLanguage {
                rules: rules.clone(),
                forms,
                index: index.clone(),
                particle,
                dictionary,
            });
        }
        Ok(SyntheticWorld {
            spec: spec.clone(),
            words,
            slots,
            determiners,
            prepositions,
            embeddings,
            languages,
        })
    }

    pub fn embeddings(&self) -> &WordEmbeddings {
        &self.embeddings
    }

    pub fn languages(&self) -> &[SyntheticLanguage] {
        &self.languages
    }

    pub fn language(&self, code: &str) -> Result<&SyntheticLanguage> {
        self.languages
            .iter()
            .find(|l| l.rules.code == code)
            .ok_or_else(|| Error::Config(format!("no synthetic language {code:?}")))
    }

    /// Every target-language word.
    pub fn target_vocabulary(&self) -> BTreeSet<&str> {
        self.words.iter().map(|w| w.text.as_str()).collect()
    }

    fn pick(&self, rng: &mut seed::Rng, pos: Pos, topic: usize) -> usize {
        let t = if rng.gen_bool(self.spec.topic_focus) {
            topic
        } else {
            rng.gen_range(0..TOPICS.len())
        };
        let slot = match pos {
            Pos::Noun => 0,
            Pos::Adjective => 1,
            Pos::Verb => 2,
            Pos::Function => unreachable!("function words are drawn directly"),
        };
        self.slots[t][slot].sample(rng)
    }

    fn noun_phrase(&self, rng: &mut seed::Rng, topic: usize) -> NounPhrase {
        NounPhrase {
            det: *self.determiners.choose(rng).expect("non-empty"),
            adj: rng.gen_bool(0.5).then(|| self.pick(rng, Pos::Adjective, topic)),
            noun: self.pick(rng, Pos::Noun, topic),
        }
    }

    fn clause(&self, rng: &mut seed::Rng) -> Clause {
        let topic = rng.gen_range(0..TOPICS.len());
        let subject = self.noun_phrase(rng, topic);
        let verb = self.pick(rng, Pos::Verb, topic);
        let object = rng.gen_bool(0.8).then(|| self.noun_phrase(rng, topic));
        let pp = rng
            .gen_bool(0.35)
            .then(|| (*self.prepositions.choose(rng).expect("non-empty"), self.noun_phrase(rng, topic)));
        Clause {
            subject,
            verb,
            object,
            pp,
        }
    }

    /// `n` parallel sentences for `code`. Languages draw independent target
    /// sentences, so no sentence pair is shared between corpora by design.
    pub fn corpus(&self, code: &str, n: usize) -> Result<ParallelCorpus> {
        let lang = self.language(code)?;
        let base = seed::derive_seed(self.spec.seed, &format!("corpus/{code}"));
        let pairs = (0..n)
            .map(|i| {
                let c = self.clause(&mut seed::rng(seed::item_seed(base, i)));
                let mut target: Vec<String> = c.target().into_iter().map(|w| self.words[w].text.clone()).collect();
                target.push(".".into());
                SentencePair {
                    source: lang.render(&c),
                    target,
                }
            })
            .collect();
        Ok(ParallelCorpus::new(code, TARGET_LANG, pairs))
    }

    /// Writes corpora (`<code>-en.<code>`, `<code>-en.en`), dictionaries
    /// (`<code>-en.dict`) and embeddings (`en.vec`) under `dir`.
    pub fn materialize(&self, dir: impl AsRef<Path>) -> Result<WorldFiles> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |path: &Path, text: &str| fs::write(path, text).map_err(|e| Error::io(path, e));

        let embeddings = dir.join(format!("{TARGET_LANG}.vec"));
        let mut text = format!("{} {}\n", self.words.len(), self.embeddings.dim());
        for w in &self.words {
            text.push_str(&w.text);
            for x in self.embeddings.get(&w.text).expect("every word embedded") {
                write!(text, " {x}").expect("string write");
            }
            text.push('\n');
        }
        write(&embeddings, &text)?;

        let mut languages = Vec::new();
        for lang in &self.languages {
            let code = lang.code();
            let stem = format!("{code}-{TARGET_LANG}");
            let files = LanguageFiles {
                code: code.to_string(),
                corpus_source: dir.join(format!("{stem}.{code}")),
                corpus_target: dir.join(format!("{stem}.{TARGET_LANG}")),
                dictionary: dir.join(format!("{stem}.dict")),
            };
            let corpus = self.corpus(code, self.spec.sentences_per_language)?;
            let join = |side: fn(&SentencePair) -> &Vec<String>| {
                corpus.pairs.iter().map(|p| side(p).join(" ") + "\n").collect::<String>()
            };
            write(&files.corpus_source, &join(|p| &p.source))?;
            write(&files.corpus_target, &join(|p| &p.target))?;
            let dict: String = lang
                .dictionary
                .iter()
                .flat_map(|(s, ts)| ts.iter().map(move |t| format!("{s} {t}\n")))
                .collect();
            write(&files.dictionary, &dict)?;
            languages.push(files);
        }
        Ok(WorldFiles { embeddings, languages })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_parallel;
    use crate::dictionary::{coverage, load_dictionary, load_embeddings, translate_sentence};

    fn world() -> SyntheticWorld {
        SyntheticWorld::new(&SyntheticSpec {
            sentences_per_language: 50,
            ..SyntheticSpec::three_families(7)
        })
        .unwrap()
    }

    #[test]
    fn lexicon_is_unique_and_embedded() {
        let w = world();
        assert_eq!(w.words.len(), 6 * (22 + 100 + 50 + 50) + 7);
        assert_eq!(w.target_vocabulary().len(), w.words.len());
        assert!(w.words.iter().all(|x| w.embeddings().get(&x.text).is_some()));
    }

    #[test]
    fn frequent_words_dominate() {
        let w = world();
        let heads: HashSet<&str> = TOPICS.iter().flat_map(|t| t.nouns).collect();
        let (mut head, mut total) = (0, 0);
        for p in w.corpus("a", 500).unwrap().pairs {
            for t in &p.target {
                if w.words.iter().any(|x| &x.text == t && x.pos == Pos::Noun) {
                    total += 1;
                    head += heads.contains(t.as_str()) as usize;
                }
            }
        }
        // harmonic mass of the first 10 of 110 ranks
        let share = head as f64 / total as f64;
        assert!((0.48..0.62).contains(&share), "{share}");
    }

    #[test]
    fn generation_is_deterministic() {
        let (a, b) = (world(), world());
        assert_eq!(a.corpus("a", 20).unwrap(), b.corpus("a", 20).unwrap());
        assert_eq!(a.language("b").unwrap().dictionary(), b.language("b").unwrap().dictionary());
        assert_ne!(a.corpus("a", 20).unwrap().pairs, a.corpus("c", 20).unwrap().pairs);
    }

    #[test]
    fn plain_language_translates_exactly() {
        let plain = SyntheticWorld::new(&SyntheticSpec {
            languages: vec![LanguageRules::new("p")],
            polysemy_rate: 0.0,
            missing_rate: 0.0,
            ..SyntheticSpec::three_families(7)
        })
        .unwrap();
        let lang = &plain.languages()[0];
        let mut rng = seed::rng(0);
        for p in plain.corpus("p", 30).unwrap().pairs {
            let t = translate_sentence(&p.source, lang.dictionary(), plain.embeddings(), &mut rng);
            assert_eq!(t.surfaces(), p.target);
        }
    }

    #[test]
    fn verb_final_language_drops_articles() {
        let w = world();
        let b = w.language("b").unwrap();
        for p in w.corpus("b", 30).unwrap().pairs {
            let verb = p
                .target
                .iter()
                .find(|t| w.words.iter().any(|x| &x.text == *t && x.pos == Pos::Verb))
                .unwrap();
            assert_eq!(p.source[p.source.len() - 2], b.form(verb).unwrap());
            assert!(!p.source.iter().any(|s| Some(s.as_str()) == b.form("the") || Some(s.as_str()) == b.form("a")));
            assert!(p.source.iter().any(|s| s == b.particle()));
        }
    }

    #[test]
    fn dictionaries_are_partial_and_polysemous() {
        let w = SyntheticWorld::new(&SyntheticSpec::three_families(3)).unwrap();
        for lang in w.languages() {
            let d = lang.dictionary();
            let covered = |rare: bool| {
                let ws: Vec<&Word> = w.words.iter().filter(|x| x.rare == rare).collect();
                ws.iter().filter(|x| d.contains(lang.form(&x.text).unwrap())).count() as f64 / ws.len() as f64
            };
            assert_eq!(covered(false), 1.0);
            assert!((0.45..0.55).contains(&covered(true)), "{}", covered(true));
            let poly = d.iter().filter(|(_, t)| t.len() > 1).count() as f64 / (d.len() - 7) as f64;
            assert!((0.14..0.26).contains(&poly), "{poly}");
            assert!(!d.contains(lang.particle()));
        }
        let a = w.language("a").unwrap().dictionary();
        let cov: Vec<f64> = w.corpus("a", 300).unwrap().pairs.iter().map(|p| coverage(&p.source, a).unwrap()).collect();
        assert!(cov.iter().any(|&c| c < 0.6) && cov.iter().any(|&c| c >= 0.85));
    }

    #[test]
    fn materialized_files_load_back() {
        let dir = tempfile::tempdir().unwrap();
        let w = world();
        let files = w.materialize(dir.path()).unwrap();
        let emb = load_embeddings(&files.embeddings).unwrap();
        assert_eq!(emb.len(), w.target_vocabulary().len());
        assert_eq!(emb.get("dog"), w.embeddings().get("dog"));
        for f in &files.languages {
            let d = load_dictionary(&f.dictionary, &f.code, TARGET_LANG).unwrap();
            assert_eq!(&d, w.language(&f.code).unwrap().dictionary());
            let c = load_parallel(&f.corpus_source, &f.corpus_target, &f.code, TARGET_LANG).unwrap();
            assert_eq!(c, w.corpus(&f.code, 50).unwrap());
        }
    }
}
