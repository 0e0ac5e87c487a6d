//! Compact Transformer encoder-decoder trained to rewrite intermediate
//! sequences into target sentences.
//!
//! The forward pass keeps every intermediate needed for a hand-written
//! backward pass; [`grad_check`] verifies it against central differences.
//! Layers use pre-normalization, sinusoidal positions, and (by default) one
//! embedding table shared by the encoder input, the decoder input and the
//! output projection.

mod checkpoint;
mod config;
mod decode;
mod gradcheck;
mod layers;
mod params;
mod train;
mod transformer;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, TensorShape};
pub use config::{AdamConfig, TrainingConfig, TransformerConfig};
pub use decode::greedy_decode;
pub use gradcheck::{grad_check, grad_check_with, GradCheckReport};
pub use layers::GradFault;
pub use params::{init_model, sinusoidal_positions, Layout, ModelParams, TensorId};
pub use train::{encode_dataset, evaluate_loss, train, train_examples, Adam, Example, TrainingHistory};
pub use transformer::{backward, cross_entropy, forward, forward_batch, loss, loss_and_grad, Batch, ForwardCache};
