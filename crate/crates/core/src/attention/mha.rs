//! Multi-head attention over the masked kernels.
//!
//! Projects inputs to Q/K/V, splits heads, runs the dense or band kernel
//! per head under one shared mask, concatenates and output-projects.

use super::mask::AttentionMask;
use super::ops::{
    attention_band_backward, attention_band_fwd, attention_dense_backward, attention_dense_fwd,
    BandAttnCache, DenseAttnCache,
};
use crate::error::{input_err, Result};
use crate::nn::Linear;
use crate::tensor::{Scalar, Tensor};

/// Which kernel runs under the hood. Results are numerically identical;
/// `Band` skips blocked entries, `Dense` is the reference path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnRoute {
    Dense,
    Band,
}

/// Projection weights of one attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct MhaParams<S> {
    pub wq: Linear<S>,
    pub wk: Linear<S>,
    pub wv: Linear<S>,
    pub wo: Linear<S>,
}

impl<S: Scalar> MhaParams<S> {
    pub fn zeros(d_model: usize) -> Self {
        MhaParams {
            wq: Linear::zeros(d_model, d_model),
            wk: Linear::zeros(d_model, d_model),
            wv: Linear::zeros(d_model, d_model),
            wo: Linear::zeros(d_model, d_model),
        }
    }

    pub fn d_model(&self) -> usize {
        self.wq.in_dim()
    }

    pub fn accumulate(&mut self, g: &MhaParams<S>) -> crate::error::Result<()> {
        self.wq.accumulate(&g.wq)?;
        self.wk.accumulate(&g.wk)?;
        self.wv.accumulate(&g.wv)?;
        self.wo.accumulate(&g.wo)
    }
}

enum HeadCache<S> {
    Dense(DenseAttnCache<S>),
    Band(BandAttnCache<S>),
}

pub struct MhaCache<S> {
    x_q: Tensor<S>,
    x_kv: Tensor<S>,
    concat: Tensor<S>,
    heads: Vec<HeadCache<S>>,
    n_heads: usize,
}

fn slice_head<S: Scalar>(x: &Tensor<S>, head: usize, d_head: usize) -> Tensor<S> {
    let n = x.rows();
    let mut out = Tensor::zeros(&[n, d_head]);
    for i in 0..n {
        let src = &x.row(i)[head * d_head..(head + 1) * d_head];
        out.row_mut(i).copy_from_slice(src);
    }
    out
}

fn place_head<S: Scalar>(dst: &mut Tensor<S>, src: &Tensor<S>, head: usize, d_head: usize) {
    for i in 0..src.rows() {
        let d = &mut dst.row_mut(i)[head * d_head..(head + 1) * d_head];
        d.copy_from_slice(src.row(i));
    }
}

pub fn multi_head_attention<S: Scalar>(
    x_q: &Tensor<S>,
    x_kv: &Tensor<S>,
    params: &MhaParams<S>,
    mask: &AttentionMask,
    n_heads: usize,
    route: AttnRoute,
) -> Result<Tensor<S>> {
    multi_head_attention_fwd(x_q, x_kv, params, mask, n_heads, route).map(|(y, _)| y)
}

pub fn multi_head_attention_fwd<S: Scalar>(
    x_q: &Tensor<S>,
    x_kv: &Tensor<S>,
    params: &MhaParams<S>,
    mask: &AttentionMask,
    n_heads: usize,
    route: AttnRoute,
) -> Result<(Tensor<S>, MhaCache<S>)> {
    let d_model = params.d_model();
    if n_heads == 0 || d_model % n_heads != 0 {
        return input_err(format!(
            "d_model {d_model} not divisible by {n_heads} heads"
        ));
    }
    if x_q.cols() != d_model || x_kv.cols() != d_model {
        return input_err(format!(
            "attention inputs must have {d_model} features, got {} and {}",
            x_q.cols(),
            x_kv.cols()
        ));
    }
    let d_head = d_model / n_heads;

    let q = params.wq.forward(x_q)?;
    let k = params.wk.forward(x_kv)?;
    let v = params.wv.forward(x_kv)?;

    let mut concat = Tensor::zeros(&[x_q.rows(), d_model]);
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = slice_head(&q, h, d_head);
        let kh = slice_head(&k, h, d_head);
        let vh = slice_head(&v, h, d_head);
        let (out_h, cache_h) = match route {
            AttnRoute::Dense => {
                let (o, c) = attention_dense_fwd(&qh, &kh, &vh, mask)?;
                (o, HeadCache::Dense(c))
            }
            AttnRoute::Band => {
                let (o, c) = attention_band_fwd(&qh, &kh, &vh, mask)?;
                (o, HeadCache::Band(c))
            }
        };
        place_head(&mut concat, &out_h, h, d_head);
        heads.push(cache_h);
    }

    let y = params.wo.forward(&concat)?;
    let cache = MhaCache {
        x_q: x_q.clone(),
        x_kv: x_kv.clone(),
        concat,
        heads,
        n_heads,
    };
    Ok((y, cache))
}

/// Gradients w.r.t. both inputs and all four projections. For
/// self-attention the caller adds the two input gradients.
pub fn multi_head_attention_backward<S: Scalar>(
    params: &MhaParams<S>,
    cache: &MhaCache<S>,
    grad_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, MhaParams<S>)> {
    let d_model = params.d_model();
    let d_head = d_model / cache.n_heads;

    let (grad_concat, dwo) = params.wo.backward(&cache.concat, grad_out)?;

    let n_q = cache.x_q.rows();
    let n_k = cache.x_kv.rows();
    let mut dq = Tensor::zeros(&[n_q, d_model]);
    let mut dk = Tensor::zeros(&[n_k, d_model]);
    let mut dv = Tensor::zeros(&[n_k, d_model]);
    for (h, head_cache) in cache.heads.iter().enumerate() {
        let g_h = slice_head(&grad_concat, h, d_head);
        let (dq_h, dk_h, dv_h) = match head_cache {
            HeadCache::Dense(c) => attention_dense_backward(c, &g_h)?,
            HeadCache::Band(c) => attention_band_backward(c, &g_h)?,
        };
        place_head(&mut dq, &dq_h, h, d_head);
        place_head(&mut dk, &dk_h, h, d_head);
        place_head(&mut dv, &dv_h, h, d_head);
    }

    let (gx_q, dwq) = params.wq.backward(&cache.x_q, &dq)?;
    let (gx_k, dwk) = params.wk.backward(&cache.x_kv, &dk)?;
    let (gx_v, dwv) = params.wv.backward(&cache.x_kv, &dv)?;
    let mut gx_kv = gx_k;
    gx_kv.add_assign(&gx_v)?;

    Ok((
        gx_q,
        gx_kv,
        MhaParams {
            wq: dwq,
            wk: dwk,
            wv: dwv,
            wo: dwo,
        },
    ))
}
