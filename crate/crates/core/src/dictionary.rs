//! Bilingual dictionaries, target-language word embeddings, and word-to-word
//! sentence translation.
//!
//! A source sentence is turned into an *intermediate sequence*: every word
//! found in the dictionary is replaced by one of its target-language
//! translations, every other word is copied through unchanged and treated as
//! noise in the target language. When a word has several candidate
//! translations, the candidate closest (by cosine similarity of target
//! embeddings) to the translation chosen for the nearest preceding
//! in-dictionary word wins. With no usable anchor, a candidate is drawn
//! uniformly at random from the caller's generator.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use log::{debug, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};

/// One-to-many word map from a source language into a target language.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BilingualDictionary {
    source_lang: String,
    target_lang: String,
    entries: IndexMap<String, Vec<String>>,
}

impl BilingualDictionary {
    pub fn new(source_lang: impl Into<String>, target_lang: impl Into<String>) -> Self {
        BilingualDictionary {
            source_lang: source_lang.into(),
            target_lang: target_lang.into(),
            entries: IndexMap::new(),
        }
    }

    /// Builds a dictionary from `(source, target)` pairs in order. Repeated
    /// source words accumulate candidates; an exact duplicate pair is ignored.
    pub fn from_pairs<I, S, T>(source_lang: &str, target_lang: &str, pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, T)>,
        S: AsRef<str>,
        T: Into<String>,
    {
        let mut dict = BilingualDictionary::new(source_lang, target_lang);
        for (s, t) in pairs {
            dict.insert(s.as_ref(), t);
        }
        dict
    }

    /// Adds `target` as a candidate for `source`. Returns false if the pair
    /// was already present.
    pub fn insert(&mut self, source: &str, target: impl Into<String>) -> bool {
        let target = target.into();
        let candidates = self.entries.entry(source.to_lowercase()).or_default();
        if candidates.contains(&target) {
            return false;
        }
        candidates.push(target);
        true
    }

    pub fn source_lang(&self) -> &str {
        &self.source_lang
    }

    pub fn target_lang(&self) -> &str {
        &self.target_lang
    }

    /// Candidate translations of `word` (case-insensitive), or `None` when the
    /// word is outside the dictionary's domain.
    pub fn lookup(&self, word: &str) -> Option<&[String]> {
        self.entries.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(&word.to_lowercase())
    }

    /// Number of source words in the domain.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of (source, target) pairs.
    pub fn num_pairs(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    /// Entries in order of first appearance.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

/// Loads a MUSE-style dictionary: one `source target` pair per line.
pub fn load_dictionary(path: impl AsRef<Path>, src: &str, tgt: &str) -> Result<BilingualDictionary> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut dict = BilingualDictionary::new(src, tgt);
    let mut duplicates = 0usize;
    let mut punctuation = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => continue,
            [source, target] => {
                if is_punctuation(source) {
                    punctuation += 1;
                    continue;
                }
                if !dict.insert(source, *target) {
                    duplicates += 1;
                }
            }
            _ => {
                return Err(Error::parse(
                    path,
                    idx + 1,
                    format!("expected 2 whitespace-separated fields, found {}", fields.len()),
                ))
            }
        }
    }
    if dict.is_empty() {
        return Err(Error::Format {
            path: path.into(),
            message: "dictionary has no entries".into(),
        });
    }
    if duplicates > 0 {
        warn!("{}: skipped {duplicates} duplicate pairs", path.display());
    }
    if punctuation > 0 {
        debug!("{}: skipped {punctuation} punctuation entries", path.display());
    }
    Ok(dict)
}

/// Word vectors for the target language.
#[derive(Debug, Clone, PartialEq)]
pub struct WordEmbeddings {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordEmbeddings {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        WordEmbeddings {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let word = word.into();
        if vector.len() != self.dim {
            return Err(Error::InvalidInput(format!(
                "vector for `{word}` has {} components, expected {}",
                vector.len(),
                self.dim
            )));
        }
        self.vectors.insert(word, vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// Copy with every vector multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        WordEmbeddings {
            dim: self.dim,
            vectors: self
                .vectors
                .iter()
                .map(|(w, v)| (w.clone(), v.iter().map(|x| x * factor).collect()))
                .collect(),
        }
    }
}

/// Loads fastText `.vec` text: a `count dim` header, then `word v1 .. v_dim`.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<WordEmbeddings> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let header_err = || Error::Format {
        path: path.into(),
        message: "missing `<count> <dim>` header".into(),
    };
    let (_, header) = lines.next().ok_or_else(header_err)?;
    let header: Vec<&str> = header.split_whitespace().collect();
    let (count, dim) = match header.as_slice() {
        [c, d] => match (c.parse::<usize>(), d.parse::<usize>()) {
            (Ok(c), Ok(d)) if d > 0 => (c, d),
            _ => return Err(header_err()),
        },
        _ => return Err(header_err()),
    };

    let mut emb = WordEmbeddings::new(dim);
    for (idx, line) in lines {
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let values = fields
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(path, idx + 1, format!("bad float: {e}")))?;
        if values.len() != dim {
            return Err(Error::parse(
                path,
                idx + 1,
                format!("`{word}` has {} components, expected {dim}", values.len()),
            ));
        }
        emb.vectors.insert(word.to_string(), values);
    }
    if emb.len() != count {
        warn!("{}: header declares {count} vectors, read {}", path.display(), emb.len());
    }
    Ok(emb)
}

/// Cosine similarity. A zero-norm input yields `f64::NEG_INFINITY` so that
/// such a vector never wins a similarity ranking.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> f64 {
    assert_eq!(u.len(), v.len(), "cosine_similarity: length mismatch");
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return f64::NEG_INFINITY;
    }
    (dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0)
}

/// Picks one translation among `candidates`.
///
/// With an anchor that has an embedding, the candidate most similar to the
/// anchor wins (first in list order on ties; candidates without embeddings
/// score negative infinity). Otherwise a candidate is drawn uniformly from
/// `rng`. A single candidate is returned without consuming randomness.
pub fn resolve_polysemy<'a, R: Rng + ?Sized>(
    candidates: &'a [String],
    anchor: Option<&str>,
    emb: &WordEmbeddings,
    rng: &mut R,
) -> &'a str {
    assert!(!candidates.is_empty(), "resolve_polysemy: no candidates");
    if candidates.len() == 1 {
        return &candidates[0];
    }
    match anchor.and_then(|a| emb.get(a)) {
        Some(anchor_vec) => {
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (i, cand) in candidates.iter().enumerate() {
                let score = emb
                    .get(cand)
                    .map_or(f64::NEG_INFINITY, |v| cosine_similarity(anchor_vec, v));
                if score > best_score {
                    best = i;
                    best_score = score;
                }
            }
            &candidates[best]
        }
        None => &candidates[rng.gen_range(0..candidates.len())],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Translated,
    Passthrough,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntermediateToken {
    pub surface: String,
    pub provenance: Provenance,
}

/// A source sentence after word-to-word substitution, one output token per
/// source token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntermediateSequence {
    pub tokens: Vec<IntermediateToken>,
    pub source: Vec<String>,
}

impl IntermediateSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surfaces(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }

    pub fn translated_count(&self) -> usize {
        self.tokens
            .iter()
            .filter(|t| t.provenance == Provenance::Translated)
            .count()
    }
}

impl fmt::Display for IntermediateSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.surfaces().join(" "))
    }
}

/// Word-to-word translation of one source sentence.
pub fn translate_sentence<S, R>(
    sentence: &[S],
    dict: &BilingualDictionary,
    emb: &WordEmbeddings,
    rng: &mut R,
) -> IntermediateSequence
where
    S: AsRef<str>,
    R: Rng + ?Sized,
{
    let mut tokens = Vec::with_capacity(sentence.len());
    // translation chosen for the nearest preceding in-dictionary token
    let mut anchor: Option<String> = None;
    for word in sentence {
        let word = word.as_ref();
        match dict.lookup(word) {
            None => tokens.push(IntermediateToken {
                surface: word.to_string(),
                provenance: Provenance::Passthrough,
            }),
            Some(candidates) => {
                let chosen = resolve_polysemy(candidates, anchor.as_deref(), emb, rng).to_string();
                anchor = Some(chosen.clone());
                tokens.push(IntermediateToken {
                    surface: chosen,
                    provenance: Provenance::Translated,
                });
            }
        }
    }
    IntermediateSequence {
        tokens,
        source: sentence.iter().map(|w| w.as_ref().to_string()).collect(),
    }
}

/// Fraction of tokens inside the dictionary's domain.
pub fn coverage<S: AsRef<str>>(sentence: &[S], dict: &BilingualDictionary) -> Result<f64> {
    if sentence.is_empty() {
        return Err(Error::InvalidInput("coverage of an empty sentence".into()));
    }
    let covered = sentence.iter().filter(|w| dict.contains(w.as_ref())).count();
    Ok(covered as f64 / sentence.len() as f64)
}

fn is_punctuation(token: &str) -> bool {
    !token.is_empty() && token.chars().all(|c| c.is_ascii_punctuation() || is_unicode_punct(c))
}

fn is_unicode_punct(c: char) -> bool {
    matches!(c, '«' | '»' | '“' | '”' | '‘' | '’' | '„' | '…' | '–' | '—' | '¿' | '¡')
}

/// Splits on whitespace and detaches leading and trailing punctuation into
/// their own tokens (`"(hola," -> ["(", "hola", ","]`).
pub fn pretokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let is_p = |c: &char| c.is_ascii_punctuation() || is_unicode_punct(*c);
        let start = chars.iter().position(|c| !is_p(c));
        let Some(start) = start else {
            out.extend(chars.iter().map(|c| c.to_string()));
            continue;
        };
        let end = chars.len() - chars.iter().rev().position(|c| !is_p(c)).unwrap();
        out.extend(chars[..start].iter().map(|c| c.to_string()));
        out.push(chars[start..end].iter().collect());
        out.extend(chars[end..].iter().map(|c| c.to_string()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use std::io::Write;

    fn temp_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn emb(pairs: &[(&str, &[f64])]) -> WordEmbeddings {
        let mut e = WordEmbeddings::new(pairs[0].1.len());
        for (w, v) in pairs {
            e.insert(*w, v.to_vec()).unwrap();
        }
        e
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn loads_simple_dictionary() {
        let f = temp_file("gato cat\nperro dog\n");
        let d = load_dictionary(f.path(), "es", "en").unwrap();
        assert_eq!(d.lookup("gato").unwrap(), ["cat"]);
        assert_eq!(d.lookup("perro").unwrap(), ["dog"]);
        assert_eq!(d.num_pairs(), 2);
    }

    #[test]
    fn polysemous_entries_accumulate_in_file_order() {
        let f = temp_file("banco bank\nbanco bench\n");
        let d = load_dictionary(f.path(), "es", "en").unwrap();
        assert_eq!(d.lookup("banco").unwrap(), ["bank", "bench"]);
        assert_eq!(d.num_pairs(), 2);
    }

    #[test]
    fn malformed_line_names_line_number() {
        let f = temp_file("gato cat extra\n");
        match load_dictionary(f.path(), "es", "en") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        let f = temp_file("gato cat\n\nperro\n");
        match load_dictionary(f.path(), "es", "en") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_dictionary_is_rejected() {
        let f = temp_file("\n\n");
        assert!(matches!(load_dictionary(f.path(), "es", "en"), Err(Error::Format { .. })));
    }

    #[test]
    fn keys_are_lowercased() {
        let f = temp_file("Gato cat\n");
        let d = load_dictionary(f.path(), "es", "en").unwrap();
        assert!(d.contains("GATO"));
        assert_eq!(d.lookup("gato").unwrap(), ["cat"]);
    }

    #[test]
    fn loads_vec_embeddings() {
        let f = temp_file("2 3\ncat 1 0 0\ndog 0 1 0\n");
        let e = load_embeddings(f.path()).unwrap();
        assert_eq!(e.dim(), 3);
        assert_eq!(e.len(), 2);
        assert_eq!(e.get("cat").unwrap(), [1.0, 0.0, 0.0]);
        assert!(e.get("horse").is_none());
    }

    #[test]
    fn embedding_arity_mismatch_is_parse_error() {
        let f = temp_file("1 3\ncat 1 0\n");
        match load_embeddings(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn embedding_header_required() {
        let f = temp_file("cat 1 0 0\n");
        assert!(matches!(load_embeddings(f.path()), Err(Error::Format { .. })));
        let f = temp_file("");
        assert!(matches!(load_embeddings(f.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert!((cosine_similarity(&[2.0, 2.0], &[1.0, 1.0]) - 1.0).abs() < 1e-15);
        // 1 / (1 * sqrt 2)
        assert!((cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]) - 0.707_106_781_186_547_5).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn single_candidate_does_not_touch_rng() {
        let e = emb(&[("cat", &[1.0, 0.0])]);
        let mut a = seed::rng(3);
        let mut b = seed::rng(3);
        let cands = vec!["feline".to_string()];
        assert_eq!(resolve_polysemy(&cands, Some("cat"), &e, &mut a), "feline");
        assert_eq!(resolve_polysemy(&cands, None, &e, &mut a), "feline");
        assert_eq!(a.gen::<u64>(), b.gen::<u64>());
    }

    #[test]
    fn argmax_picks_closest_candidate() {
        let e = emb(&[("cat", &[1.0, 0.0]), ("feline", &[0.9, 0.1]), ("dog", &[0.0, 1.0])]);
        let cands = vec!["feline".to_string(), "dog".to_string()];
        // cos(cat, feline) = 0.9 / sqrt(0.82) ~ 0.994, cos(cat, dog) = 0
        let mut r = seed::rng(0);
        assert_eq!(resolve_polysemy(&cands, Some("cat"), &e, &mut r), "feline");
    }

    #[test]
    fn argmax_ties_go_to_list_order() {
        let e = emb(&[("a", &[1.0, 0.0]), ("x", &[1.0, 1.0]), ("y", &[2.0, 2.0])]);
        let mut r = seed::rng(0);
        let cands = vec!["y".to_string(), "x".to_string()];
        assert_eq!(resolve_polysemy(&cands, Some("a"), &e, &mut r), "y");
    }

    #[test]
    fn random_fallback_is_seeded() {
        let e = emb(&[("cat", &[1.0, 0.0])]);
        let cands = vec!["bank".to_string(), "bench".to_string()];
        let first = resolve_polysemy(&cands, None, &e, &mut seed::rng(0)).to_string();
        for _ in 0..5 {
            assert_eq!(resolve_polysemy(&cands, None, &e, &mut seed::rng(0)), first);
        }
        // anchor without an embedding behaves like no anchor
        assert_eq!(resolve_polysemy(&cands, Some("zebra"), &e, &mut seed::rng(0)), first);
    }

    #[test]
    fn translate_unambiguous_and_passthrough() {
        let d = BilingualDictionary::from_pairs("es", "en", [("el", "the"), ("gato", "cat")]);
        let e = WordEmbeddings::new(2);
        let mut r = seed::rng(0);
        let out = translate_sentence(&toks("el gato"), &d, &e, &mut r);
        assert_eq!(out.surfaces(), ["the", "cat"]);
        assert!(out.tokens.iter().all(|t| t.provenance == Provenance::Translated));

        let out = translate_sentence(&toks("xyz gato"), &d, &e, &mut r);
        assert_eq!(out.surfaces(), ["xyz", "cat"]);
        assert_eq!(out.tokens[0].provenance, Provenance::Passthrough);
        assert_eq!(out.tokens[1].provenance, Provenance::Translated);
    }

    #[test]
    fn anchor_is_previous_in_dictionary_translation() {
        let d = BilingualDictionary::from_pairs(
            "es",
            "en",
            [("gato", "cat"), ("banco", "bank"), ("banco", "bench")],
        );
        let e = emb(&[("cat", &[1.0, 0.0]), ("bank", &[0.0, 1.0]), ("bench", &[0.8, 0.2])]);
        let mut r = seed::rng(0);
        let out = translate_sentence(&toks("gato banco"), &d, &e, &mut r);
        assert_eq!(out.surfaces(), ["cat", "bench"]);
        // passthrough tokens in between do not reset the anchor
        let out = translate_sentence(&toks("gato qqq banco"), &d, &e, &mut r);
        assert_eq!(out.surfaces(), ["cat", "qqq", "bench"]);
    }

    #[test]
    fn passthrough_keeps_surface_case() {
        let d = BilingualDictionary::from_pairs("es", "en", [("gato", "cat")]);
        let out = translate_sentence(&toks("Gato Madrid"), &d, &WordEmbeddings::new(1), &mut seed::rng(0));
        assert_eq!(out.surfaces(), ["cat", "Madrid"]);
    }

    #[test]
    fn coverage_examples() {
        let d = BilingualDictionary::from_pairs("es", "en", [("el", "the"), ("gato", "cat")]);
        assert_eq!(coverage(&toks("el gato xyz abc"), &d).unwrap(), 0.5);
        assert_eq!(coverage(&toks("el gato"), &d).unwrap(), 1.0);
        assert_eq!(coverage(&toks("xyz"), &d).unwrap(), 0.0);
        assert!(coverage::<String>(&[], &d).is_err());
    }

    #[test]
    fn pretokenize_detaches_punctuation() {
        assert_eq!(pretokenize("(hola, mundo)."), ["(", "hola", ",", "mundo", ")", "."]);
        assert_eq!(pretokenize("l'eau  3.5 ..."), ["l'eau", "3.5", ".", ".", "."]);
        assert!(pretokenize("   ").is_empty());
    }
}
