//! The encoder-decoder: embedding, pre-norm encoder and decoder stacks,
//! output projection, cross-entropy, and the full backward pass.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Axis};

use super::layers::{
    apply_mask, attention, attention_back, feed_forward, feed_forward_back, grad_view, layer_norm, layer_norm_back,
    AttentionCache, Dropout, FeedForwardCache, GradFault, NormCache, Segment,
};
use super::params::{ModelParams, TensorId};
use crate::error::{Error, Result};
use crate::seed;

/// Sequences for one optimizer step. `tgt_in[i]` is the decoder input
/// (BOS + target) and `tgt_out[i]` the shifted prediction target
/// (target + EOS); both have the same length.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Batch {
    pub src: Vec<Vec<u32>>,
    pub tgt_in: Vec<Vec<u32>>,
    pub tgt_out: Vec<Vec<u32>>,
}

impl Batch {
    /// Teacher-forcing batch from framed `(source, target)` id sequences.
    pub fn from_pairs<'a, I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (&'a [u32], &'a [u32])>,
    {
        let mut b = Batch::default();
        for (src, tgt) in pairs {
            assert!(tgt.len() >= 2, "target must contain at least BOS and EOS");
            b.src.push(src.to_vec());
            b.tgt_in.push(tgt[..tgt.len() - 1].to_vec());
            b.tgt_out.push(tgt[1..].to_vec());
        }
        b
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

pub(crate) struct Packed {
    pub ids: Vec<u32>,
    pub positions: Vec<usize>,
    pub ranges: Vec<std::ops::Range<usize>>,
    pub valid: Vec<bool>,
}

impl Packed {
    pub fn new(seqs: &[Vec<u32>], pad: u32) -> Self {
        let mut p = Packed {
            ids: Vec::new(),
            positions: Vec::new(),
            ranges: Vec::with_capacity(seqs.len()),
            valid: Vec::new(),
        };
        for seq in seqs {
            let start = p.ids.len();
            for (pos, &id) in seq.iter().enumerate() {
                p.ids.push(id);
                p.positions.push(pos);
                p.valid.push(id != pad);
            }
            p.ranges.push(start..p.ids.len());
        }
        p
    }
}

fn check_lengths(p: &ModelParams, seqs: &[Vec<u32>], what: &str) -> Result<()> {
    let cfg = &p.config;
    for s in seqs {
        if s.is_empty() {
            return Err(Error::InvalidInput(format!("empty {what} sequence")));
        }
        if s.len() > cfg.max_seq_len {
            return Err(Error::InvalidInput(format!(
                "{what} sequence of length {} exceeds max_seq_len {}",
                s.len(),
                cfg.max_seq_len
            )));
        }
        if let Some(&bad) = s.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(Error::InvalidInput(format!(
                "{what} id {bad} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
    }
    Ok(())
}

fn embed(p: &ModelParams, table: TensorId, packed: &Packed) -> Array2<f64> {
    let d = p.config.d_model;
    let scale = (d as f64).sqrt();
    let emb = p.view(table);
    let mut x = Array2::zeros((packed.ids.len(), d));
    for ((mut row, &id), &pos) in x.rows_mut().into_iter().zip(&packed.ids).zip(&packed.positions) {
        row.assign(&emb.row(id as usize));
        row *= scale;
        row += &p.positions.row(pos);
    }
    x
}

fn embed_back(p: &ModelParams, g: &mut [f64], table: TensorId, packed: &Packed, dx: &Array2<f64>) {
    let scale = (p.config.d_model as f64).sqrt();
    let mut ge = grad_view(g, table);
    for (row, &id) in dx.rows().into_iter().zip(&packed.ids) {
        ge.row_mut(id as usize).scaled_add(scale, &row);
    }
}

struct EncoderLayerCache {
    norm_attn: NormCache,
    attn: AttentionCache,
    drop_attn: Option<Array2<f64>>,
    norm_ff: NormCache,
    ff: FeedForwardCache,
    drop_ff: Option<Array2<f64>>,
}

struct DecoderLayerCache {
    norm_self: NormCache,
    self_attn: AttentionCache,
    drop_self: Option<Array2<f64>>,
    norm_cross: NormCache,
    cross_attn: AttentionCache,
    drop_cross: Option<Array2<f64>>,
    norm_ff: NormCache,
    ff: FeedForwardCache,
    drop_ff: Option<Array2<f64>>,
}

/// Everything the backward pass needs from a forward pass.
pub struct ForwardCache {
    src: Packed,
    tgt: Packed,
    src_segments: Vec<Segment>,
    tgt_segments: Vec<Segment>,
    cross_segments: Vec<Segment>,
    drop_src: Option<Array2<f64>>,
    drop_tgt: Option<Array2<f64>>,
    encoder: Vec<EncoderLayerCache>,
    encoder_norm: NormCache,
    decoder: Vec<DecoderLayerCache>,
    decoder_norm: NormCache,
    decoder_out: Array2<f64>,
}

pub(crate) struct Encoded {
    pub out: Array2<f64>,
    pub packed: Packed,
    pub segments: Vec<Segment>,
    caches: Vec<EncoderLayerCache>,
    norm: NormCache,
    drop: Option<Array2<f64>>,
}

fn self_segments(packed: &Packed) -> Vec<Segment> {
    packed
        .ranges
        .iter()
        .map(|r| Segment {
            q: r.clone(),
            kv: r.clone(),
        })
        .collect()
}

pub(crate) fn encode(p: &ModelParams, src: &[Vec<u32>], dropout: &mut Dropout<'_>) -> Encoded {
    let cfg = &p.config;
    let packed = Packed::new(src, cfg.pad_id);
    let segments = self_segments(&packed);
    let mut x = embed(p, p.layout.src_embedding, &packed);
    let drop = dropout.apply(&mut x);
    let mut caches = Vec::with_capacity(cfg.num_layers);
    for ids in &p.layout.encoder {
        let (h, norm_attn) = layer_norm(p, ids.norm_attn, &x);
        let (mut a, attn) = attention(p, ids.attn, h, None, &segments, &packed.valid, false, cfg.num_heads);
        let drop_attn = dropout.apply(&mut a);
        x += &a;
        let (h, norm_ff) = layer_norm(p, ids.norm_ff, &x);
        let (mut f, ff) = feed_forward(p, ids.ff, h);
        let drop_ff = dropout.apply(&mut f);
        x += &f;
        caches.push(EncoderLayerCache {
            norm_attn,
            attn,
            drop_attn,
            norm_ff,
            ff,
            drop_ff,
        });
    }
    let (out, norm) = layer_norm(p, p.layout.encoder_norm, &x);
    Encoded {
        out,
        packed,
        segments,
        caches,
        norm,
        drop,
    }
}

/// Decoder hidden states (after the final norm) for packed target inputs.
fn decode_hidden(
    p: &ModelParams,
    enc: &Encoded,
    tgt: &[Vec<u32>],
    dropout: &mut Dropout<'_>,
) -> (Array2<f64>, Packed, Vec<Segment>, Vec<Segment>, Option<Array2<f64>>, Vec<DecoderLayerCache>, NormCache) {
    let cfg = &p.config;
    let packed = Packed::new(tgt, cfg.pad_id);
    let segments = self_segments(&packed);
    let cross: Vec<Segment> = packed
        .ranges
        .iter()
        .zip(&enc.packed.ranges)
        .map(|(q, kv)| Segment {
            q: q.clone(),
            kv: kv.clone(),
        })
        .collect();
    let mut y = embed(p, p.layout.tgt_embedding, &packed);
    let drop = dropout.apply(&mut y);
    let mut caches = Vec::with_capacity(cfg.num_layers);
    for ids in &p.layout.decoder {
        let (h, norm_self) = layer_norm(p, ids.norm_self, &y);
        let (mut a, self_attn) = attention(p, ids.self_attn, h, None, &segments, &packed.valid, true, cfg.num_heads);
        let drop_self = dropout.apply(&mut a);
        y += &a;
        let (h, norm_cross) = layer_norm(p, ids.norm_cross, &y);
        let (mut c, cross_attn) = attention(
            p,
            ids.cross_attn,
            h,
            Some(&enc.out),
            &cross,
            &enc.packed.valid,
            false,
            cfg.num_heads,
        );
        let drop_cross = dropout.apply(&mut c);
        y += &c;
        let (h, norm_ff) = layer_norm(p, ids.norm_ff, &y);
        let (mut f, ff) = feed_forward(p, ids.ff, h);
        let drop_ff = dropout.apply(&mut f);
        y += &f;
        caches.push(DecoderLayerCache {
            norm_self,
            self_attn,
            drop_self,
            norm_cross,
            cross_attn,
            drop_cross,
            norm_ff,
            ff,
            drop_ff,
        });
    }
    let (out, norm) = layer_norm(p, p.layout.decoder_norm, &y);
    (out, packed, segments, cross, drop, caches, norm)
}

pub(crate) fn project(p: &ModelParams, hidden: &Array2<f64>) -> Array2<f64> {
    let mut logits = hidden.dot(&p.view(p.layout.output).t());
    logits += &p.view(p.layout.output_bias).row(0);
    logits
}

/// Logits for a batch (rows = packed target positions) and the cache for
/// [`backward`]. Dropout is active only when `rng` is given.
pub fn forward_batch(
    p: &ModelParams,
    batch: &Batch,
    rng: Option<&mut seed::Rng>,
) -> Result<(Array2<f64>, ForwardCache)> {
    if batch.src.len() != batch.tgt_in.len() || batch.tgt_in.len() != batch.tgt_out.len() {
        return Err(Error::InvalidInput("batch sides have different sizes".into()));
    }
    check_lengths(p, &batch.src, "source")?;
    check_lengths(p, &batch.tgt_in, "target")?;
    for (i, o) in batch.tgt_in.iter().zip(&batch.tgt_out) {
        if i.len() != o.len() {
            return Err(Error::InvalidInput("decoder input and output lengths differ".into()));
        }
    }
    let mut dropout = Dropout {
        p: p.config.dropout,
        rng,
    };
    let enc = encode(p, &batch.src, &mut dropout);
    let (hidden, tgt, tgt_segments, cross_segments, drop_tgt, decoder, decoder_norm) =
        decode_hidden(p, &enc, &batch.tgt_in, &mut dropout);
    let logits = project(p, &hidden);
    let cache = ForwardCache {
        src: enc.packed,
        tgt,
        src_segments: enc.segments,
        tgt_segments,
        cross_segments,
        drop_src: enc.drop,
        drop_tgt,
        encoder: enc.caches,
        encoder_norm: enc.norm,
        decoder,
        decoder_norm,
        decoder_out: hidden,
    };
    Ok((logits, cache))
}

/// Logits (`tgt positions × vocab`) for one source and one decoder input.
/// Dropout is applied only in `train_mode`, drawing from `rng`.
pub fn forward(
    p: &ModelParams,
    src_ids: &[u32],
    tgt_ids: &[u32],
    train_mode: bool,
    rng: &mut seed::Rng,
) -> Result<Array2<f64>> {
    let batch = Batch {
        src: vec![src_ids.to_vec()],
        tgt_in: vec![tgt_ids.to_vec()],
        tgt_out: vec![tgt_ids.to_vec()],
    };
    let rng = if train_mode { Some(rng) } else { None };
    forward_batch(p, &batch, rng).map(|(l, _)| l)
}

/// Mean cross-entropy (nats) over non-PAD targets, with its gradient with
/// respect to the logits.
pub fn cross_entropy(logits: &Array2<f64>, targets: &[u32], pad_id: u32) -> Result<(f64, usize, Array2<f64>)> {
    if logits.nrows() != targets.len() {
        return Err(Error::InvalidInput(format!(
            "{} logit rows for {} targets",
            logits.nrows(),
            targets.len()
        )));
    }
    let count = targets.iter().filter(|&&t| t != pad_id).count();
    if count == 0 {
        return Err(Error::InvalidInput("every target position is PAD".into()));
    }
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    for ((row, mut g), &t) in logits.rows().into_iter().zip(grad.rows_mut()).zip(targets) {
        if t == pad_id {
            continue;
        }
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[t as usize];
        for (gv, &v) in g.iter_mut().zip(row) {
            *gv = (v - lse).exp() / count as f64;
        }
        g[t as usize] -= 1.0 / count as f64;
    }
    Ok((total / count as f64, count, grad))
}

/// Mean cross-entropy per non-PAD target token, in nats.
pub fn loss(logits: &Array2<f64>, target_ids: &[u32], pad_id: u32) -> Result<f64> {
    cross_entropy(logits, target_ids, pad_id).map(|(l, _, _)| l)
}

/// Gradient of the loss with respect to every parameter, given the loss
/// gradient with respect to the logits.
pub fn backward(p: &ModelParams, cache: &ForwardCache, dlogits: &Array2<f64>, fault: GradFault) -> Vec<f64> {
    let cfg = &p.config;
    let heads = cfg.num_heads;
    let mut g = vec![0.0; p.num_params()];

    // output projection
    general_mat_mul(1.0, &dlogits.t(), &cache.decoder_out, 1.0, &mut grad_view(&mut g, p.layout.output));
    grad_view(&mut g, p.layout.output_bias)
        .row_mut(0)
        .scaled_add(1.0, &dlogits.sum_axis(Axis(0)));
    let dhidden = dlogits.dot(&p.view(p.layout.output));

    // decoder
    let mut dy = layer_norm_back(p, &mut g, p.layout.decoder_norm, &cache.decoder_norm, &dhidden);
    let mut denc = Array2::zeros((cache.src.ids.len(), cfg.d_model));
    for (ids, c) in p.layout.decoder.iter().zip(&cache.decoder).rev() {
        let df = apply_mask(&dy, &c.drop_ff);
        let dh = feed_forward_back(p, &mut g, ids.ff, &c.ff, &df);
        dy += &layer_norm_back(p, &mut g, ids.norm_ff, &c.norm_ff, &dh);

        let dc = apply_mask(&dy, &c.drop_cross);
        let (dh, dkv) = attention_back(
            p,
            &mut g,
            ids.cross_attn,
            &c.cross_attn,
            &dc,
            &cache.cross_segments,
            heads,
            fault,
        );
        denc += &dkv.expect("cross-attention has separate keys");
        dy += &layer_norm_back(p, &mut g, ids.norm_cross, &c.norm_cross, &dh);

        let da = apply_mask(&dy, &c.drop_self);
        let (dh, _) = attention_back(p, &mut g, ids.self_attn, &c.self_attn, &da, &cache.tgt_segments, heads, fault);
        dy += &layer_norm_back(p, &mut g, ids.norm_self, &c.norm_self, &dh);
    }
    let dy = apply_mask(&dy, &cache.drop_tgt);
    embed_back(p, &mut g, p.layout.tgt_embedding, &cache.tgt, &dy);

    // encoder
    let mut dx = layer_norm_back(p, &mut g, p.layout.encoder_norm, &cache.encoder_norm, &denc);
    for (ids, c) in p.layout.encoder.iter().zip(&cache.encoder).rev() {
        let df = apply_mask(&dx, &c.drop_ff);
        let dh = feed_forward_back(p, &mut g, ids.ff, &c.ff, &df);
        dx += &layer_norm_back(p, &mut g, ids.norm_ff, &c.norm_ff, &dh);

        let da = apply_mask(&dx, &c.drop_attn);
        let (dh, _) = attention_back(p, &mut g, ids.attn, &c.attn, &da, &cache.src_segments, heads, fault);
        dx += &layer_norm_back(p, &mut g, ids.norm_attn, &c.norm_attn, &dh);
    }
    let dx = apply_mask(&dx, &cache.drop_src);
    embed_back(p, &mut g, p.layout.src_embedding, &cache.src, &dx);
    g
}

/// Loss, number of scored tokens, and parameter gradient for one batch.
pub fn loss_and_grad(
    p: &ModelParams,
    batch: &Batch,
    rng: Option<&mut seed::Rng>,
    fault: GradFault,
) -> Result<(f64, usize, Vec<f64>)> {
    let (logits, cache) = forward_batch(p, batch, rng)?;
    let targets: Vec<u32> = batch.tgt_out.iter().flatten().copied().collect();
    let (loss, count, dlogits) = cross_entropy(&logits, &targets, p.config.pad_id)?;
    Ok((loss, count, backward(p, &cache, &dlogits, fault)))
}

/// Encoder output for one source, reused across greedy decoding steps.
pub(crate) fn encode_source(p: &ModelParams, src: &[u32]) -> Result<Encoded> {
    check_lengths(p, &[src.to_vec()], "source")?;
    Ok(encode(p, &[src.to_vec()], &mut Dropout { p: 0.0, rng: None }))
}

/// Eval-mode logits of the last decoder position.
pub(crate) fn next_token_logits(p: &ModelParams, enc: &Encoded, prefix: &[u32]) -> Array2<f64> {
    let (hidden, ..) = decode_hidden(p, enc, &[prefix.to_vec()], &mut Dropout { p: 0.0, rng: None });
    let last = hidden.slice(ndarray::s![hidden.nrows() - 1.., ..]).to_owned();
    project(p, &last)
}
