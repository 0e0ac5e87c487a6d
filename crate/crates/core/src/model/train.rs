use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{AdamConfig, TrainingConfig};
use super::layers::GradFault;
use super::params::ModelParams;
use super::transformer::{forward_batch, cross_entropy, loss_and_grad, Batch};
use crate::corpus::DictDataset;
use crate::error::{Error, Result};
use crate::seed;
use crate::tokenizer::{encode, Vocabulary};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, num_params: usize) -> Self {
        Adam {
            cfg,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.cfg;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

fn clip(grads: &mut [f64], max_norm: f64) {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    /// Token-weighted mean training loss per epoch (nats/token).
    pub train_loss: Vec<f64>,
    /// Validation loss per epoch, when a validation set was given.
    pub val_loss: Vec<f64>,
    /// Wall-clock seconds per epoch. Not serialized, so that saved histories
    /// stay byte-identical across reruns.
    #[serde(skip)]
    pub epoch_seconds: Vec<f64>,
    pub steps: usize,
    pub threads: usize,
    /// Examples skipped for exceeding the model's maximum length.
    pub skipped: usize,
}

impl TrainingHistory {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }
}

/// Shuffles, stably sorts by combined length (so equal lengths stay in
/// random order), cuts into batches and shuffles the batch order.
fn length_grouped_batches(examples: &[&Example], batch_size: usize, rng: &mut seed::Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| examples[i].0.len() + examples[i].1.len());
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    batches.shuffle(rng);
    batches
}

/// A framed `(source ids, target ids)` example.
pub type Example = (Vec<u32>, Vec<u32>);

/// Encodes a dataset's intermediate sequences and targets with the shared
/// vocabulary.
pub fn encode_dataset(dataset: &DictDataset, tok: &Vocabulary) -> Vec<Example> {
    dataset
        .pairs
        .iter()
        .map(|pair| {
            (
                encode(&pair.intermediate.surfaces(), tok).ids,
                encode(&pair.target, tok).ids,
            )
        })
        .collect()
}

/// Mean loss over examples in eval mode.
pub fn evaluate_loss(p: &ModelParams, examples: &[Example], batch_size: usize) -> Result<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    for chunk in examples.chunks(batch_size.max(1)) {
        let batch = Batch::from_pairs(chunk.iter().map(|(s, t)| (s.as_slice(), t.as_slice())));
        let (logits, _) = forward_batch(p, &batch, None)?;
        let targets: Vec<u32> = batch.tgt_out.iter().flatten().copied().collect();
        let (l, n, _) = cross_entropy(&logits, &targets, p.config.pad_id)?;
        total += l * n as f64;
        count += n;
    }
    Ok(total / count.max(1) as f64)
}

/// Teacher-forced training on a dictionary dataset.
pub fn train(
    p: ModelParams,
    dataset: &DictDataset,
    tok: &Vocabulary,
    tcfg: &TrainingConfig,
) -> Result<(ModelParams, TrainingHistory)> {
    if tok.len() != p.config.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} tokens but the model expects {}",
            tok.len(),
            p.config.vocab_size
        )));
    }
    train_examples(p, &encode_dataset(dataset, tok), None, tcfg)
}

/// Trains on pre-encoded examples for `tcfg.epochs` epochs (or until early
/// stopping on `validation`). Each epoch shuffles the examples with a
/// generator seeded from `tcfg.seed`, which also drives dropout.
pub fn train_examples(
    mut p: ModelParams,
    examples: &[Example],
    validation: Option<&[Example]>,
    tcfg: &TrainingConfig,
) -> Result<(ModelParams, TrainingHistory)> {
    tcfg.validate()?;
    let max = p.config.max_seq_len;
    let fits = |(s, t): &&Example| s.len() <= max && t.len() <= max + 1;
    let kept: Vec<&Example> = examples.iter().filter(fits).collect();
    let mut history = TrainingHistory {
        threads: 1,
        skipped: examples.len() - kept.len(),
        ..Default::default()
    };
    if history.skipped > 0 {
        warn!("skipping {} examples longer than {max} tokens", history.skipped);
    }
    if kept.is_empty() {
        return Err(Error::InvalidInput("no training examples".into()));
    }
    let validation: Option<Vec<Example>> = validation.map(|v| v.iter().filter(fits).cloned().collect());

    let mut rng = seed::stage_rng(tcfg.seed, "train");
    let mut adam = Adam::new(tcfg.adam.clone(), p.num_params());
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut since_best = 0;
    for epoch in 0..tcfg.epochs {
        let start = Instant::now();
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in length_grouped_batches(&kept, tcfg.batch_size, &mut rng) {
            let batch = Batch::from_pairs(chunk.iter().map(|&i| (kept[i].0.as_slice(), kept[i].1.as_slice())));
            let (loss, n, mut grads) = loss_and_grad(&p, &batch, Some(&mut rng), GradFault::None)?;
            history.steps += 1;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    step: history.steps,
                    epoch: epoch + 1,
                    loss,
                });
            }
            if let Some(c) = tcfg.clip_norm {
                clip(&mut grads, c);
            }
            adam.step(&mut p.data, &grads);
            total += loss * n as f64;
            count += n;
        }
        history.train_loss.push(total / count as f64);
        history.epoch_seconds.push(start.elapsed().as_secs_f64());
        let val = match &validation {
            Some(v) if !v.is_empty() => Some(evaluate_loss(&p, v, tcfg.batch_size)?),
            _ => None,
        };
        info!(
            "epoch {}/{}: train loss {:.4}{}",
            epoch + 1,
            tcfg.epochs,
            total / count as f64,
            val.map(|v| format!(", val loss {v:.4}")).unwrap_or_default()
        );
        if let Some(v) = val {
            history.val_loss.push(v);
            if let Some(patience) = tcfg.early_stopping_patience {
                if best.as_ref().map_or(true, |(b, _)| v < *b) {
                    best = Some((v, p.data.clone()));
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= patience {
                        info!("early stop after epoch {}", epoch + 1);
                        break;
                    }
                }
            }
        }
    }
    if let Some((_, data)) = best {
        p.data = data;
    }
    if !p.all_finite() {
        return Err(Error::Divergence {
            step: history.steps,
            epoch: history.epochs(),
            loss: f64::NAN,
        });
    }
    Ok((p, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: 0.1,
                ..Default::default()
            },
            2,
        );
        let mut p = vec![1.0, -1.0];
        adam.step(&mut p, &[0.5, -2.0]);
        // bias-corrected first step is lr * sign(g)
        assert!((p[0] - 0.9).abs() < 1e-9);
        assert!((p[1] + 0.9).abs() < 1e-9);
    }

    #[test]
    fn batches_partition_examples_by_length() {
        let ex: Vec<Example> = (0..10).map(|i| (vec![1; 1 + i % 4], vec![1; 2])).collect();
        let refs: Vec<&Example> = ex.iter().collect();
        let batches = length_grouped_batches(&refs, 3, &mut seed::rng(0));
        let mut all: Vec<usize> = batches.iter().flatten().copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        for b in &batches {
            let lens: Vec<usize> = b.iter().map(|&i| ex[i].0.len()).collect();
            assert!(lens.iter().max().unwrap() - lens.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![3.0, 4.0];
        clip(&mut g, 1.0);
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
        let mut g = vec![0.3, 0.4];
        clip(&mut g, 1.0);
        assert_eq!(g, [0.3, 0.4]);
    }
}
