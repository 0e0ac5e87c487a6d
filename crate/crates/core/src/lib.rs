//! Dictionary-assisted neural machine translation for languages with little
//! or no parallel data.
//!
//! A bilingual dictionary turns a source sentence into a target-language
//! *intermediate sequence* (word-to-word, source word order, untranslated
//! words kept as noise). A small Transformer is then trained to rewrite
//! intermediate sequences into fluent target sentences. Because the model
//! only ever sees target-language words, one model can serve several source
//! languages, including ones absent from its training data.
//!
//! Module map:
//!
//! * [`dictionary`]: dictionaries, embeddings, word-to-word translation
//! * [`corpus`]: parallel corpora and coverage-filtered dataset building
//! * [`tokenizer`]: WordPiece shared by model input and output
//! * [`model`]: Transformer encoder-decoder with hand-written backprop
//! * [`eval`]: corpus BLEU and the word-for-word baseline
//! * [`experiment`]: end-to-end runs and sweep grids
//! * [`synthetic`]: offline synthetic language families for testing

pub mod corpus;
pub mod dictionary;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod seed;
pub mod synthetic;
pub mod tokenizer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/dictionary.md")]
    mod dictionary {}
    #[doc = include_str!("../../../book/src/dataset.md")]
    mod dataset {}
    #[doc = include_str!("../../../book/src/tokenizer.md")]
    mod tokenizer {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/bleu.md")]
    mod bleu {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
