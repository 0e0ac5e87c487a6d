//! Forward and backward passes of the individual building blocks. Rows of an
//! activation matrix are token positions; several sequences are packed into
//! one matrix and attention runs per [`Segment`].

use std::ops::Range;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis, Zip};
use rand::Rng;

use super::params::{AttentionIds, FeedForwardIds, LinearIds, ModelParams, NormIds, TensorId};
use crate::seed;

const LN_EPS: f64 = 1e-5;

pub(crate) fn grad_view(g: &mut [f64], id: TensorId) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((id.rows, id.cols), &mut g[id.range()]).expect("layout shape")
}

/// Deliberate gradient corruptions for checking that the finite-difference
/// harness notices broken backprop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradFault {
    #[default]
    None,
    /// Negate the gradient flowing into attention scores.
    FlipAttentionScores,
}

pub(crate) struct Dropout<'a> {
    pub p: f64,
    pub rng: Option<&'a mut seed::Rng>,
}

impl Dropout<'_> {
    /// Applies inverted dropout in place and returns the mask, or `None` when
    /// inactive.
    pub fn apply(&mut self, x: &mut Array2<f64>) -> Option<Array2<f64>> {
        let rng = self.rng.as_deref_mut()?;
        if self.p == 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - self.p);
        let p = self.p;
        let mask = Array2::from_shape_fn(x.raw_dim(), |_| if rng.gen::<f64>() < p { 0.0 } else { keep });
        *x *= &mask;
        Some(mask)
    }
}

pub(crate) fn apply_mask(dy: &Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => dy * m,
        None => dy.clone(),
    }
}

pub(crate) fn linear(p: &ModelParams, ids: LinearIds, x: &ArrayView2<f64>) -> Array2<f64> {
    let mut y = x.dot(&p.view(ids.w));
    y += &p.view(ids.b).row(0);
    y
}

/// Accumulates parameter gradients and returns `dx`.
pub(crate) fn linear_back(
    p: &ModelParams,
    g: &mut [f64],
    ids: LinearIds,
    x: &ArrayView2<f64>,
    dy: &Array2<f64>,
) -> Array2<f64> {
    general_mat_mul(1.0, &x.t(), dy, 1.0, &mut grad_view(g, ids.w));
    let mut gb = grad_view(g, ids.b);
    gb.row_mut(0).scaled_add(1.0, &dy.sum_axis(Axis(0)));
    dy.dot(&p.view(ids.w).t())
}

pub(crate) struct NormCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

pub(crate) fn layer_norm(p: &ModelParams, ids: NormIds, x: &Array2<f64>) -> (Array2<f64>, NormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        row *= *r;
    }
    let mut y = &xhat * &p.view(ids.gain).row(0);
    y += &p.view(ids.bias).row(0);
    (y, NormCache { xhat, rstd })
}

pub(crate) fn layer_norm_back(
    p: &ModelParams,
    g: &mut [f64],
    ids: NormIds,
    cache: &NormCache,
    dy: &Array2<f64>,
) -> Array2<f64> {
    grad_view(g, ids.gain)
        .row_mut(0)
        .scaled_add(1.0, &(dy * &cache.xhat).sum_axis(Axis(0)));
    grad_view(g, ids.bias).row_mut(0).scaled_add(1.0, &dy.sum_axis(Axis(0)));
    let dxhat = dy * &p.view(ids.gain).row(0);
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for (((mut out, dh), xh), &r) in dx
        .rows_mut()
        .into_iter()
        .zip(dxhat.rows())
        .zip(cache.xhat.rows())
        .zip(cache.rstd.iter())
    {
        let mean_dh = dh.sum() / d;
        let mean_dh_xh = dh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d;
        Zip::from(&mut out)
            .and(&dh)
            .and(&xh)
            .for_each(|o, &a, &b| *o = r * (a - mean_dh - b * mean_dh_xh));
    }
    dx
}

pub(crate) struct FeedForwardCache {
    input: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
}

pub(crate) fn feed_forward(p: &ModelParams, ids: FeedForwardIds, x: Array2<f64>) -> (Array2<f64>, FeedForwardCache) {
    let pre = linear(p, ids.inner, &x.view());
    let act = pre.mapv(|v| v.max(0.0));
    let y = linear(p, ids.outer, &act.view());
    (y, FeedForwardCache { input: x, pre, act })
}

pub(crate) fn feed_forward_back(
    p: &ModelParams,
    g: &mut [f64],
    ids: FeedForwardIds,
    cache: &FeedForwardCache,
    dy: &Array2<f64>,
) -> Array2<f64> {
    let mut dact = linear_back(p, g, ids.outer, &cache.act.view(), dy);
    Zip::from(&mut dact).and(&cache.pre).for_each(|d, &z| {
        if z <= 0.0 {
            *d = 0.0
        }
    });
    linear_back(p, g, ids.inner, &cache.input.view(), &dact)
}

/// Queries `q` of one sequence attending to keys `kv` of (possibly another)
/// sequence, both as row ranges into the packed matrices.
#[derive(Debug, Clone)]
pub(crate) struct Segment {
    pub q: Range<usize>,
    pub kv: Range<usize>,
}

pub(crate) struct AttentionCache {
    xq: Array2<f64>,
    xkv: Option<Array2<f64>>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
}

/// Multi-head scaled dot-product attention. `kv = None` means
/// self-attention over `xq`. Keys with `key_valid[row] == false` (padding)
/// receive no weight; with `causal`, query `i` sees keys `0..=i` of its
/// segment.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention(
    p: &ModelParams,
    ids: AttentionIds,
    xq: Array2<f64>,
    xkv: Option<&Array2<f64>>,
    segments: &[Segment],
    key_valid: &[bool],
    causal: bool,
    heads: usize,
) -> (Array2<f64>, AttentionCache) {
    let kv_in = xkv.unwrap_or(&xq);
    let q = linear(p, ids.q, &xq.view());
    let k = linear(p, ids.k, &kv_in.view());
    let v = linear(p, ids.v, &kv_in.view());
    let dh = q.ncols() / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut ctx = Array2::zeros(q.raw_dim());
    let mut probs = Vec::with_capacity(segments.len() * heads);
    for seg in segments {
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let qh = q.slice(s![seg.q.clone(), cols.clone()]);
            let kh = k.slice(s![seg.kv.clone(), cols.clone()]);
            let vh = v.slice(s![seg.kv.clone(), cols.clone()]);
            let mut scores = qh.dot(&kh.t());
            for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
                let mut max = f64::NEG_INFINITY;
                for (j, sc) in row.iter_mut().enumerate() {
                    if !key_valid[seg.kv.start + j] || (causal && j > i) {
                        *sc = f64::NEG_INFINITY;
                    } else {
                        *sc *= scale;
                        max = max.max(*sc);
                    }
                }
                let mut sum = 0.0;
                for sc in row.iter_mut() {
                    *sc = if *sc == f64::NEG_INFINITY { 0.0 } else { (*sc - max).exp() };
                    sum += *sc;
                }
                if sum > 0.0 {
                    row /= sum;
                }
            }
            ctx.slice_mut(s![seg.q.clone(), cols]).assign(&scores.dot(&vh));
            probs.push(scores);
        }
    }
    let out = linear(p, ids.o, &ctx.view());
    let cache = AttentionCache {
        xkv: xkv.cloned(),
        xq,
        q,
        k,
        v,
        probs,
        ctx,
    };
    (out, cache)
}

/// Returns `(d xq, d xkv)`; for self-attention the second is `None` and the
/// key/value contribution is already folded into the first.
pub(crate) fn attention_back(
    p: &ModelParams,
    g: &mut [f64],
    ids: AttentionIds,
    cache: &AttentionCache,
    dout: &Array2<f64>,
    segments: &[Segment],
    heads: usize,
    fault: GradFault,
) -> (Array2<f64>, Option<Array2<f64>>) {
    let dctx = linear_back(p, g, ids.o, &cache.ctx.view(), dout);
    let dh = cache.q.ncols() / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    let mut probs = cache.probs.iter();
    for seg in segments {
        for h in 0..heads {
            let prob = probs.next().expect("one cached matrix per segment and head");
            let cols = h * dh..(h + 1) * dh;
            let dctx_h = dctx.slice(s![seg.q.clone(), cols.clone()]);
            let qh = cache.q.slice(s![seg.q.clone(), cols.clone()]);
            let kh = cache.k.slice(s![seg.kv.clone(), cols.clone()]);
            let vh = cache.v.slice(s![seg.kv.clone(), cols.clone()]);

            let mut dv_h = dv.slice_mut(s![seg.kv.clone(), cols.clone()]);
            general_mat_mul(1.0, &prob.t(), &dctx_h, 1.0, &mut dv_h);

            let dprob = dctx_h.dot(&vh.t());
            let mut dscore = Array2::zeros(prob.raw_dim());
            for ((mut ds, pr), dp) in dscore.rows_mut().into_iter().zip(prob.rows()).zip(dprob.rows()) {
                let dot: f64 = pr.iter().zip(dp).map(|(a, b)| a * b).sum();
                Zip::from(&mut ds)
                    .and(&pr)
                    .and(&dp)
                    .for_each(|d, &pv, &dpv| *d = pv * (dpv - dot) * scale);
            }
            if fault == GradFault::FlipAttentionScores {
                dscore.mapv_inplace(|x| -x);
            }
            let mut dq_h = dq.slice_mut(s![seg.q.clone(), cols.clone()]);
            general_mat_mul(1.0, &dscore, &kh, 1.0, &mut dq_h);
            let mut dk_h = dk.slice_mut(s![seg.kv.clone(), cols]);
            general_mat_mul(1.0, &dscore.t(), &qh, 1.0, &mut dk_h);
        }
    }
    let mut dxq = linear_back(p, g, ids.q, &cache.xq.view(), &dq);
    match &cache.xkv {
        None => {
            dxq += &linear_back(p, g, ids.k, &cache.xq.view(), &dk);
            dxq += &linear_back(p, g, ids.v, &cache.xq.view(), &dv);
            (dxq, None)
        }
        Some(xkv) => {
            let mut dxkv = linear_back(p, g, ids.k, &xkv.view(), &dk);
            dxkv += &linear_back(p, g, ids.v, &xkv.view(), &dv);
            (dxq, Some(dxkv))
        }
    }
}
