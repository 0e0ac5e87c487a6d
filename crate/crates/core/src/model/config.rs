use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::Vocabulary;

/// Architecture hyperparameters. Defaults follow the compact setup used for
/// low-resource runs: 4 layers, 100 hidden units, 400-wide feed-forward,
/// tied embeddings, dropout 0.1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    pub num_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub num_heads: usize,
    pub dropout: f64,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    pub tie_embeddings: bool,
    pub pad_id: u32,
    pub bos_id: u32,
    pub eos_id: u32,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            num_layers: 4,
            d_model: 100,
            d_ff: 400,
            num_heads: 4,
            dropout: 0.1,
            max_seq_len: 128,
            vocab_size: 0,
            tie_embeddings: true,
            pad_id: 0,
            bos_id: 2,
            eos_id: 3,
        }
    }
}

impl TransformerConfig {
    /// Default architecture sized and wired for `vocab`.
    pub fn for_vocab(vocab: &Vocabulary) -> Self {
        TransformerConfig::default().with_vocab(vocab)
    }

    pub fn with_vocab(mut self, vocab: &Vocabulary) -> Self {
        self.vocab_size = vocab.len();
        self.pad_id = vocab.pad_id();
        self.bos_id = vocab.bos_id();
        self.eos_id = vocab.eos_id();
        self
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_layers == 0 {
            return fail("num_layers must be positive".into());
        }
        if self.d_model == 0 || self.d_ff == 0 {
            return fail("d_model and d_ff must be positive".into());
        }
        if self.num_heads == 0 || self.d_model % self.num_heads != 0 {
            return fail(format!(
                "d_model {} is not divisible by num_heads {}",
                self.d_model, self.num_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.max_seq_len < 2 {
            return fail("max_seq_len must be at least 2".into());
        }
        if self.vocab_size == 0 {
            return fail("vocab_size must be positive".into());
        }
        for (name, id) in [("pad", self.pad_id), ("bos", self.bos_id), ("eos", self.eos_id)] {
            if id as usize >= self.vocab_size {
                return fail(format!("{name} id {id} outside vocabulary of {}", self.vocab_size));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Rescale gradients whose global L2 norm exceeds this.
    pub clip_norm: Option<f64>,
    /// Stop after this many epochs without validation improvement.
    pub early_stopping_patience: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 32,
            epochs: 50,
            adam: AdamConfig::default(),
            seed: 0,
            clip_norm: None,
            early_stopping_patience: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if self.adam.learning_rate < 0.0 {
            return Err(Error::Config("negative learning rate".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_divisibility() {
        let mut c = TransformerConfig {
            vocab_size: 10,
            ..Default::default()
        };
        assert!(c.validate().is_ok());
        assert_eq!(c.head_dim(), 25);
        c.num_heads = 3;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn dropout_range() {
        let c = TransformerConfig {
            vocab_size: 10,
            dropout: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
