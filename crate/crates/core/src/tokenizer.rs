//! WordPiece subword tokenization over a BERT-style `vocab.txt`.
//!
//! One [`Vocabulary`] serves both the model input (intermediate sequences,
//! which may contain untranslated foreign words) and the model output. Words
//! missing from the vocabulary are split into `##`-continued pieces instead of
//! collapsing to a single unknown token.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};

pub const CONTINUATION_PREFIX: &str = "##";

/// Words longer than this (in chars) become UNK without segmentation.
pub const MAX_WORD_CHARS: usize = 100;

/// Literal strings of the four special tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub pad: String,
    pub unk: String,
    pub bos: String,
    pub eos: String,
}

impl Default for SpecialTokens {
    fn default() -> Self {
        SpecialTokens {
            pad: "[PAD]".into(),
            unk: "[UNK]".into(),
            bos: "[CLS]".into(),
            eos: "[SEP]".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    pad: u32,
    unk: u32,
    bos: u32,
    eos: u32,
    lowercase: bool,
}

impl Vocabulary {
    /// Builds a vocabulary from an ordered token list (id = position).
    pub fn from_tokens(tokens: Vec<String>, specials: &SpecialTokens, lowercase: bool) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Vocab("empty vocabulary".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if let Some(prev) = index.insert(tok.clone(), i as u32) {
                return Err(Error::Vocab(format!(
                    "duplicate token `{tok}` on lines {} and {}",
                    prev + 1,
                    i + 1
                )));
            }
        }
        let find = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::Vocab(format!("missing special token `{name}`")))
        };
        let vocab = Vocabulary {
            pad: find(&specials.pad)?,
            unk: find(&specials.unk)?,
            bos: find(&specials.bos)?,
            eos: find(&specials.eos)?,
            tokens,
            index,
            lowercase,
        };
        let ids = BTreeSet::from([vocab.pad, vocab.unk, vocab.bos, vocab.eos]);
        if ids.len() != 4 {
            return Err(Error::Vocab("special tokens must have distinct ids".into()));
        }
        Ok(vocab)
    }

    /// Character-complete vocabulary for a word list: the four specials, every
    /// character as a word-initial piece and as a `##` continuation, then every
    /// word occurring at least `min_count` times as a whole token. Any word over
    /// the seen alphabet segments without UNK.
    pub fn build<'a, I>(words: I, min_count: usize, lowercase: bool) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let specials = SpecialTokens::default();
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut alphabet: BTreeSet<char> = BTreeSet::new();
        for word in words {
            for piece in basic_split(word, lowercase) {
                alphabet.extend(piece.chars());
                *counts.entry(piece).or_default() += 1;
            }
        }
        let mut tokens = vec![specials.pad.clone(), specials.unk.clone(), specials.bos.clone(), specials.eos.clone()];
        let mut seen: BTreeSet<String> = tokens.iter().cloned().collect();
        let mut push = |t: String, tokens: &mut Vec<String>| {
            if seen.insert(t.clone()) {
                tokens.push(t);
            }
        };
        for c in &alphabet {
            push(c.to_string(), &mut tokens);
            push(format!("{CONTINUATION_PREFIX}{c}"), &mut tokens);
        }
        for (word, n) in counts {
            if n >= min_count.max(1) {
                push(word, &mut tokens);
            }
        }
        Vocabulary::from_tokens(tokens, &specials, lowercase).expect("built vocabulary is valid")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn pad_id(&self) -> u32 {
        self.pad
    }

    pub fn unk_id(&self) -> u32 {
        self.unk
    }

    pub fn bos_id(&self) -> u32 {
        self.bos
    }

    pub fn eos_id(&self) -> u32 {
        self.eos
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    fn is_special(&self, id: u32) -> bool {
        id == self.pad || id == self.bos || id == self.eos
    }

    /// Writes the vocabulary in `vocab.txt` form.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.tokens.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Loads a BERT `vocab.txt` with the stock special tokens, lowercasing input.
pub fn load_vocab(path: impl AsRef<Path>) -> Result<Vocabulary> {
    load_vocab_with(path, &SpecialTokens::default(), true)
}

pub fn load_vocab_with(path: impl AsRef<Path>, specials: &SpecialTokens, lowercase: bool) -> Result<Vocabulary> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let tokens: Vec<String> = text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect();
    if tokens.is_empty() {
        return Err(Error::Format {
            path: path.into(),
            message: "empty vocabulary file".into(),
        });
    }
    Vocabulary::from_tokens(tokens, specials, lowercase)
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace() && !c.is_control())
}

/// BERT basic tokenization of one whitespace-free chunk: optional lowercasing,
/// then every punctuation character becomes its own piece.
fn basic_split(text: &str, lowercase: bool) -> Vec<String> {
    let text = if lowercase { text.to_lowercase() } else { text.to_string() };
    let mut out = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
        } else if is_punct(c) {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
            out.push(c.to_string());
        } else {
            current.push(c);
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// The text that `decode(encode(x))` reproduces for in-vocabulary input.
pub fn normalize<S: AsRef<str>>(text: &[S], lowercase: bool) -> String {
    text.iter()
        .flat_map(|w| basic_split(w.as_ref(), lowercase))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Greedy longest-match-first segmentation of a single word into ids.
pub fn wordpiece_ids(word: &str, v: &Vocabulary) -> Vec<u32> {
    let chars: Vec<char> = word.chars().collect();
    if chars.is_empty() {
        return Vec::new();
    }
    if chars.len() > MAX_WORD_CHARS {
        return vec![v.unk];
    }
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut candidate = String::new();
    while start < chars.len() {
        let mut end = chars.len();
        let mut found = None;
        while end > start {
            candidate.clear();
            if start > 0 {
                candidate.push_str(CONTINUATION_PREFIX);
            }
            candidate.extend(&chars[start..end]);
            if let Some(id) = v.id(&candidate) {
                found = Some(id);
                break;
            }
            end -= 1;
        }
        match found {
            Some(id) => pieces.push(id),
            None => return vec![v.unk],
        }
        start = end;
    }
    pieces
}

/// [`wordpiece_ids`] rendered as token strings.
pub fn wordpiece_tokenize(word: &str, v: &Vocabulary) -> Vec<String> {
    wordpiece_ids(word, v)
        .into_iter()
        .map(|id| v.tokens[id as usize].clone())
        .collect()
}

/// Ids framed by BOS and EOS.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenizedText {
    pub ids: Vec<u32>,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn encode<S: AsRef<str>>(text: &[S], v: &Vocabulary) -> TokenizedText {
    let mut ids = vec![v.bos];
    for chunk in text {
        for word in basic_split(chunk.as_ref(), v.lowercase) {
            ids.extend(wordpiece_ids(&word, v));
        }
    }
    ids.push(v.eos);
    TokenizedText { ids }
}

/// Encodes whitespace-separated text.
pub fn encode_str(text: &str, v: &Vocabulary) -> TokenizedText {
    let words: Vec<&str> = text.split_whitespace().collect();
    encode(&words, v)
}

pub fn decode(t: &TokenizedText, v: &Vocabulary) -> Result<String> {
    decode_ids(&t.ids, v)
}

pub fn decode_ids(ids: &[u32], v: &Vocabulary) -> Result<String> {
    let mut out = String::new();
    for &id in ids {
        let tok = v
            .token(id)
            .ok_or_else(|| Error::Vocab(format!("id {id} out of range for vocabulary of {}", v.len())))?;
        if v.is_special(id) {
            continue;
        }
        match tok.strip_prefix(CONTINUATION_PREFIX) {
            Some(rest) if !out.is_empty() => out.push_str(rest),
            _ => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(tok);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn vocab(tokens: &[&str]) -> Vocabulary {
        let mut all: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"].iter().map(|s| s.to_string()).collect();
        all.extend(tokens.iter().map(|s| s.to_string()));
        Vocabulary::from_tokens(all, &SpecialTokens::default(), true).unwrap()
    }

    fn temp_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_vocab_file() {
        let f = temp_file("[PAD]\n[UNK]\n[CLS]\n[SEP]\nthe\n");
        let v = load_vocab(f.path()).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.pad_id(), 0);
        assert_eq!(v.unk_id(), 1);
        assert_eq!(v.bos_id(), 2);
        assert_eq!(v.eos_id(), 3);
        assert_eq!(v.id("the"), Some(4));
    }

    #[test]
    fn duplicate_token_reports_both_lines() {
        let f = temp_file("[PAD]\n[UNK]\n[CLS]\n[SEP]\nthe\ncat\ndog\nsat\nthe\n");
        let err = load_vocab(f.path()).unwrap_err().to_string();
        assert!(err.contains("lines 5 and 9"), "{err}");
    }

    #[test]
    fn missing_special_token() {
        let f = temp_file("[PAD]\n[CLS]\n[SEP]\nthe\n");
        let err = load_vocab(f.path()).unwrap_err().to_string();
        assert!(err.contains("[UNK]"), "{err}");
    }

    #[test]
    fn custom_special_names() {
        let f = temp_file("<pad>\n<unk>\n<s>\n</s>\nthe\n");
        let specials = SpecialTokens {
            pad: "<pad>".into(),
            unk: "<unk>".into(),
            bos: "<s>".into(),
            eos: "</s>".into(),
        };
        let v = load_vocab_with(f.path(), &specials, false).unwrap();
        assert_eq!(v.bos_id(), 2);
        assert_eq!(encode(&["the"], &v).ids, vec![2, 4, 3]);
    }

    #[test]
    fn greedy_longest_match() {
        let v = vocab(&["un", "##aff", "##able", "##a", "u", "##n"]);
        assert_eq!(wordpiece_tokenize("unaffable", &v), ["un", "##aff", "##able"]);
    }

    #[test]
    fn whole_word_and_unk() {
        let v = vocab(&["cat", "c", "##a"]);
        assert_eq!(wordpiece_tokenize("cat", &v), ["cat"]);
        // "cat" matches, "##s" does not, so the whole word is UNK
        assert_eq!(wordpiece_tokenize("cats", &v), ["[UNK]"]);
        assert_eq!(wordpiece_tokenize("жук", &v), ["[UNK]"]);
        let long = "c".repeat(MAX_WORD_CHARS + 1);
        assert_eq!(wordpiece_tokenize(&long, &v), ["[UNK]"]);
    }

    #[test]
    fn encode_frames_with_bos_eos() {
        let v = vocab(&["the", "cat"]);
        assert_eq!(encode::<&str>(&[], &v).ids, vec![2, 3]);
        assert_eq!(encode(&["the", "cat"], &v).ids, vec![2, 4, 5, 3]);
    }

    #[test]
    fn encode_foreign_passthrough_never_panics() {
        let v = Vocabulary::build(["the", "cat"], 1, true);
        let ids = encode(&["the", "gatto", "cat", "ß"], &v).ids;
        assert_eq!(ids[0], v.bos_id());
        assert_eq!(*ids.last().unwrap(), v.eos_id());
        assert!(ids.len() > 4);
        assert!(ids.iter().all(|&i| (i as usize) < v.len()));
    }

    #[test]
    fn decode_fuses_continuations() {
        let v = vocab(&["un", "##aff", "##able"]);
        let t = TokenizedText { ids: vec![2, 4, 5, 6, 3] };
        assert_eq!(decode(&t, &v).unwrap(), "unaffable");
        assert_eq!(decode(&TokenizedText { ids: vec![2, 3] }, &v).unwrap(), "");
        assert!(decode(&TokenizedText { ids: vec![99] }, &v).is_err());
    }

    #[test]
    fn round_trip_in_vocab() {
        let v = vocab(&["the", "cat"]);
        let enc = encode(&["the", "cat"], &v);
        assert_eq!(decode(&enc, &v).unwrap(), "the cat");
    }

    #[test]
    fn punctuation_split_and_lowercase() {
        let v = Vocabulary::build(["Hello,", "world!"], 1, true);
        let enc = encode(&["Hello,", "world!"], &v);
        assert_eq!(decode(&enc, &v).unwrap(), "hello , world !");
        assert_eq!(normalize(&["Hello,", "world!"], true), "hello , world !");
    }

    #[test]
    fn built_vocab_is_character_complete() {
        let v = Vocabulary::build(["abc", "abd", "abc"], 2, true);
        assert!(v.id("abc").is_some());
        assert!(v.id("abd").is_none());
        assert_eq!(wordpiece_tokenize("abd", &v), ["a", "##b", "##d"]);
        assert_eq!(wordpiece_tokenize("dcba", &v), ["d", "##c", "##b", "##a"]);
    }
}
