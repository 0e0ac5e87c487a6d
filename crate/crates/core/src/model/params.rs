//! Parameter storage. Every weight lives in one flat `Vec<f64>`; a
//! [`Layout`] derived from the config names the slice and shape of each
//! tensor. Gradients and optimizer moments use the same layout, so updates
//! and finite-difference probes are plain loops over the flat buffer.

use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use rand::Rng;

use super::config::TransformerConfig;
use crate::error::Result;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl TensorId {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearIds {
    /// `in × out`
    pub w: TensorId,
    /// `1 × out`
    pub b: TensorId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormIds {
    pub gain: TensorId,
    pub bias: TensorId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionIds {
    pub q: LinearIds,
    pub k: LinearIds,
    pub v: LinearIds,
    pub o: LinearIds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedForwardIds {
    pub inner: LinearIds,
    pub outer: LinearIds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderLayerIds {
    pub norm_attn: NormIds,
    pub attn: AttentionIds,
    pub norm_ff: NormIds,
    pub ff: FeedForwardIds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderLayerIds {
    pub norm_self: NormIds,
    pub self_attn: AttentionIds,
    pub norm_cross: NormIds,
    pub cross_attn: AttentionIds,
    pub norm_ff: NormIds,
    pub ff: FeedForwardIds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform with standard deviation `1/sqrt(cols)`.
    Embedding,
    /// Glorot uniform over `rows + cols`.
    Glorot,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub src_embedding: TensorId,
    pub tgt_embedding: TensorId,
    /// `vocab × d_model`; logits are `hidden · output^T + output_bias`.
    pub output: TensorId,
    pub output_bias: TensorId,
    pub encoder: Vec<EncoderLayerIds>,
    pub encoder_norm: NormIds,
    pub decoder: Vec<DecoderLayerIds>,
    pub decoder_norm: NormIds,
    named: Vec<(String, TensorId, Init)>,
    len: usize,
}

struct Builder {
    named: Vec<(String, TensorId, Init)>,
    len: usize,
}

impl Builder {
    fn tensor(&mut self, name: String, rows: usize, cols: usize, init: Init) -> TensorId {
        let id = TensorId {
            offset: self.len,
            rows,
            cols,
        };
        self.len += rows * cols;
        self.named.push((name, id, init));
        id
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> LinearIds {
        LinearIds {
            w: self.tensor(format!("{name}.weight"), fan_in, fan_out, Init::Glorot),
            b: self.tensor(format!("{name}.bias"), 1, fan_out, Init::Zeros),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> NormIds {
        NormIds {
            gain: self.tensor(format!("{name}.gain"), 1, d, Init::Ones),
            bias: self.tensor(format!("{name}.bias"), 1, d, Init::Zeros),
        }
    }

    fn attention(&mut self, name: &str, d: usize) -> AttentionIds {
        AttentionIds {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }

    fn feed_forward(&mut self, name: &str, d: usize, d_ff: usize) -> FeedForwardIds {
        FeedForwardIds {
            inner: self.linear(&format!("{name}.inner"), d, d_ff),
            outer: self.linear(&format!("{name}.outer"), d_ff, d),
        }
    }
}

impl Layout {
    pub fn new(cfg: &TransformerConfig) -> Self {
        let (v, d, f) = (cfg.vocab_size, cfg.d_model, cfg.d_ff);
        let mut b = Builder {
            named: Vec::new(),
            len: 0,
        };
        let shared = b.tensor(
            if cfg.tie_embeddings { "embedding" } else { "src_embedding" }.into(),
            v,
            d,
            Init::Embedding,
        );
        let (src_embedding, tgt_embedding, output) = if cfg.tie_embeddings {
            (shared, shared, shared)
        } else {
            let tgt = b.tensor("tgt_embedding".into(), v, d, Init::Embedding);
            let out = b.tensor("output".into(), v, d, Init::Embedding);
            (shared, tgt, out)
        };
        let output_bias = b.tensor("output_bias".into(), 1, v, Init::Zeros);
        let encoder = (0..cfg.num_layers)
            .map(|i| EncoderLayerIds {
                norm_attn: b.norm(&format!("encoder.{i}.norm_attn"), d),
                attn: b.attention(&format!("encoder.{i}.attn"), d),
                norm_ff: b.norm(&format!("encoder.{i}.norm_ff"), d),
                ff: b.feed_forward(&format!("encoder.{i}.ff"), d, f),
            })
            .collect();
        let encoder_norm = b.norm("encoder.norm", d);
        let decoder = (0..cfg.num_layers)
            .map(|i| DecoderLayerIds {
                norm_self: b.norm(&format!("decoder.{i}.norm_self"), d),
                self_attn: b.attention(&format!("decoder.{i}.self_attn"), d),
                norm_cross: b.norm(&format!("decoder.{i}.norm_cross"), d),
                cross_attn: b.attention(&format!("decoder.{i}.cross_attn"), d),
                norm_ff: b.norm(&format!("decoder.{i}.norm_ff"), d),
                ff: b.feed_forward(&format!("decoder.{i}.ff"), d, f),
            })
            .collect();
        let decoder_norm = b.norm("decoder.norm", d);
        Layout {
            src_embedding,
            tgt_embedding,
            output,
            output_bias,
            encoder,
            encoder_norm,
            decoder,
            decoder_norm,
            named: b.named,
            len: b.len,
        }
    }

    /// Total number of scalars.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Every tensor with its name, in storage order.
    pub fn tensors(&self) -> impl Iterator<Item = (&str, TensorId)> {
        self.named.iter().map(|(n, id, _)| (n.as_str(), *id))
    }

    pub fn find(&self, name: &str) -> Option<TensorId> {
        self.tensors().find(|(n, _)| *n == name).map(|(_, id)| id)
    }
}

/// All trainable weights of the encoder-decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: TransformerConfig,
    pub layout: Layout,
    pub data: Vec<f64>,
    pub(crate) positions: Array2<f64>,
}

impl ModelParams {
    /// Builds parameters from an existing buffer (for checkpoint loading).
    pub fn from_data(config: TransformerConfig, data: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if data.len() != layout.len() {
            return Err(crate::Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.len(),
                data.len()
            )));
        }
        let positions = sinusoidal_positions(config.max_seq_len, config.d_model);
        Ok(ModelParams {
            config,
            layout,
            data,
            positions,
        })
    }

    pub fn view(&self, id: TensorId) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((id.rows, id.cols), &self.data[id.range()]).expect("layout shape")
    }

    pub fn view_mut(&mut self, id: TensorId) -> ArrayViewMut2<'_, f64> {
        ArrayViewMut2::from_shape((id.rows, id.cols), &mut self.data[id.range()]).expect("layout shape")
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    /// Encoder input table.
    pub fn encoder_embedding(&self) -> &[f64] {
        &self.data[self.layout.src_embedding.range()]
    }

    /// Decoder input table.
    pub fn decoder_embedding(&self) -> &[f64] {
        &self.data[self.layout.tgt_embedding.range()]
    }

    /// Output projection (`vocab × d_model`).
    pub fn output_projection(&self) -> &[f64] {
        &self.data[self.layout.output.range()]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Randomly initialized parameters, deterministic in `seed`.
pub fn init_model(cfg: &TransformerConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let layout = Layout::new(cfg);
    let mut data = vec![0.0; layout.len()];
    let mut rng = seed::rng(seed);
    for (_, id, init) in &layout.named {
        let slice = &mut data[id.range()];
        match init {
            Init::Zeros => {}
            Init::Ones => slice.fill(1.0),
            Init::Embedding => {
                let a = (3.0 / id.cols as f64).sqrt();
                slice.iter_mut().for_each(|x| *x = rng.gen_range(-a..a));
            }
            Init::Glorot => {
                let a = (6.0 / (id.rows + id.cols) as f64).sqrt();
                slice.iter_mut().for_each(|x| *x = rng.gen_range(-a..a));
            }
        }
    }
    let positions = sinusoidal_positions(cfg.max_seq_len, cfg.d_model);
    Ok(ModelParams {
        config: cfg.clone(),
        layout,
        data,
        positions,
    })
}

/// `PE[pos, 2i] = sin(pos / 10000^(2i/d))`, `PE[pos, 2i+1] = cos(..)`.
pub fn sinusoidal_positions(max_len: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((max_len, d), |(pos, j)| {
        let i = (j / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * i / d as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}
