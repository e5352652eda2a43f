//! Pre-LN transformer decoder: causal self-attention, per-layer
//! cross-attention to pooled encoder views, feed-forward. Two drivers:
//! a full teacher-forced forward (training and the uncached reference)
//! and a KV-cached incremental `decode_step` for greedy decoding.
//!
//! For the hybrid cross mask, each query position is typed by its input
//! token and anchored to the time bin of the most recent Time token at or
//! before it. Under pooling by kernel p the anchor becomes
//! `min(bin / p, pooled_len - 1)` while the window stays in pooled
//! coordinates (wider effective span on coarser views).

use super::config::{CrossAttn, DecSelfAttn, ModelConfig};
use super::params::Params;
use super::pooling::pool_encoder_output;
use crate::attention::ops::add_macs;
use crate::attention::{
    build_causal_band_mask, build_full_mask, build_hybrid_mask, multi_head_attention_backward,
    multi_head_attention_fwd, AttentionMask, HybridQuery, MhaCache,
};
use crate::error::{contract_err, input_err, Result};
use crate::nn::{
    dropout_backward, dropout_forward, sinusoidal_pe, DropoutMask, FeedForwardCache,
    LayerNormCache,
};
use crate::tensor::{Scalar, Tensor};
use crate::tokenizer::{Token, TokenKind, BOS_ID, EOS_ID};
use rand_chacha::ChaCha8Rng;

/// Per-position (token kind, most recent Time bin at or before it).
pub fn token_meta(ids: &[u32]) -> Result<Vec<(TokenKind, Option<u32>)>> {
    let mut last = None;
    ids.iter()
        .map(|&id| {
            let tok = Token::from_id(id)?;
            if let Token::Time(b) = tok {
                last = Some(b);
            }
            Ok((tok.kind(), last))
        })
        .collect()
}

/// Decoder self-attention mask: always causal, optionally banded.
pub fn dec_self_mask(cfg: &ModelConfig, n: usize) -> Result<AttentionMask> {
    let w = match cfg.dec_self {
        DecSelfAttn::Full => n, // window covering everything reduces to plain causal
        DecSelfAttn::CausalLocal => cfg.window,
    };
    build_causal_band_mask(n, w)
}

/// Cross-attention mask against a pooled view of length `pooled_len`
/// produced with the given kernel.
pub fn cross_mask(
    cfg: &ModelConfig,
    meta: &[(TokenKind, Option<u32>)],
    kernel: usize,
    pooled_len: usize,
) -> Result<AttentionMask> {
    match cfg.cross {
        CrossAttn::Full => build_full_mask(meta.len(), pooled_len),
        CrossAttn::HybridGlobalLocal => {
            let queries: Vec<HybridQuery> = meta
                .iter()
                .map(|&(kind, bin)| HybridQuery {
                    kind,
                    anchor: bin.map(|b| (b as usize / kernel).min(pooled_len - 1)),
                })
                .collect();
            build_hybrid_mask(&queries, pooled_len, cfg.window)
        }
    }
}

/// Pooled encoder views, one per decoder layer.
pub fn pooled_views<S: Scalar>(z: &Tensor<S>, cfg: &ModelConfig) -> Result<Vec<Tensor<S>>> {
    cfg.pooling
        .kernels()
        .iter()
        .map(|&k| pool_encoder_output(z, k))
        .collect()
}

pub struct DecLayerCache<S> {
    ln1: LayerNormCache<S>,
    self_mha: MhaCache<S>,
    drop1: DropoutMask<S>,
    ln2: LayerNormCache<S>,
    cross_mha: MhaCache<S>,
    drop2: DropoutMask<S>,
    ln3: LayerNormCache<S>,
    ffn: FeedForwardCache<S>,
    drop3: DropoutMask<S>,
}

pub struct DecoderCache<S> {
    input_ids: Vec<u32>,
    layers: Vec<DecLayerCache<S>>,
    final_ln: LayerNormCache<S>,
    final_out: Tensor<S>, // input of the output projection
}

/// Teacher-forced decoder forward over a whole input sequence.
/// Returns logits `[n, vocab]`.
pub fn decoder_fwd<S: Scalar>(
    input_ids: &[u32],
    pooled: &[Tensor<S>],
    cfg: &ModelConfig,
    params: &Params<S>,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(Tensor<S>, DecoderCache<S>)> {
    let n = input_ids.len();
    if n == 0 {
        return input_err("decoder needs at least one input token");
    }
    if n > cfg.max_output_len {
        return input_err(format!(
            "decoder input length {n} exceeds max_output_len {}",
            cfg.max_output_len
        ));
    }
    if pooled.len() != cfg.dec_layers {
        return contract_err(format!(
            "{} pooled views for {} decoder layers",
            pooled.len(),
            cfg.dec_layers
        ));
    }
    let meta = token_meta(input_ids)?;
    let self_mask = dec_self_mask(cfg, n)?;

    let mut x = params.embedding.forward(input_ids)?;
    crate::nn::add_positional(&mut x, 0);

    let mut layers = Vec::with_capacity(cfg.dec_layers);
    for (li, layer) in params.dec_layers.iter().enumerate() {
        let kernel = cfg.pooling.kernels()[li];
        let x_mask = cross_mask(cfg, &meta, kernel, pooled[li].rows())?;

        let (ln1_out, ln1) = layer.ln1.forward(&x)?;
        let (mut self_out, self_mha) = multi_head_attention_fwd(
            &ln1_out, &ln1_out, &layer.self_attn, &self_mask, cfg.heads, cfg.route,
        )?;
        let drop1 = dropout_forward(&mut self_out, cfg.dropout, rng.as_deref_mut())?;
        x.add_assign(&self_out)?;
        if x.check_finite("").is_err() {
            return contract_err(format!(
                "non-finite activation in decoder layer {li} (self-attention)"
            ));
        }

        let (ln2_out, ln2) = layer.ln2.forward(&x)?;
        let (mut cross_out, cross_mha) = multi_head_attention_fwd(
            &ln2_out, &pooled[li], &layer.cross_attn, &x_mask, cfg.heads, cfg.route,
        )?;
        let drop2 = dropout_forward(&mut cross_out, cfg.dropout, rng.as_deref_mut())?;
        x.add_assign(&cross_out)?;
        if x.check_finite("").is_err() {
            return contract_err(format!(
                "non-finite activation in decoder layer {li} (cross-attention)"
            ));
        }

        let (ln3_out, ln3) = layer.ln3.forward(&x)?;
        let (mut ffn_out, ffn) = layer.ffn.forward(&ln3_out)?;
        let drop3 = dropout_forward(&mut ffn_out, cfg.dropout, rng.as_deref_mut())?;
        x.add_assign(&ffn_out)?;
        if x.check_finite("").is_err() {
            return contract_err(format!("non-finite activation in decoder layer {li} (ffn)"));
        }

        layers.push(DecLayerCache {
            ln1,
            self_mha,
            drop1,
            ln2,
            cross_mha,
            drop2,
            ln3,
            ffn,
            drop3,
        });
    }
    let (final_out, final_ln) = params.dec_final_ln.forward(&x)?;
    let logits = params.output_proj.forward(&final_out)?;
    Ok((
        logits,
        DecoderCache {
            input_ids: input_ids.to_vec(),
            layers,
            final_ln,
            final_out,
        },
    ))
}

/// Backward through the decoder. Parameter gradients accumulate into
/// `grads`; returns the gradient w.r.t. each pooled encoder view.
pub fn decoder_backward<S: Scalar>(
    params: &Params<S>,
    cache: &DecoderCache<S>,
    pooled: &[Tensor<S>],
    dlogits: &Tensor<S>,
    grads: &mut Params<S>,
) -> Result<Vec<Tensor<S>>> {
    let (g_final_out, d_outproj) = params.output_proj.backward(&cache.final_out, dlogits)?;
    grads.output_proj.accumulate(&d_outproj)?;
    let (mut gx, d_final) = params.dec_final_ln.backward(&cache.final_ln, &g_final_out)?;
    grads.dec_final_ln.accumulate(&d_final)?;

    let mut pooled_grads: Vec<Tensor<S>> = pooled
        .iter()
        .map(|p| Tensor::zeros(p.shape()))
        .collect();

    for (li, layer) in params.dec_layers.iter().enumerate().rev() {
        let lc = &cache.layers[li];
        let glayer = &mut grads.dec_layers[li];

        // ffn sub-layer
        let mut g_branch = gx.clone();
        dropout_backward(&mut g_branch, &lc.drop3);
        let (g_ln3_out, d_ffn) = layer.ffn.backward(&lc.ffn, &g_branch)?;
        glayer.ffn.accumulate(&d_ffn)?;
        let (g_res, d_ln3) = layer.ln3.backward(&lc.ln3, &g_ln3_out)?;
        glayer.ln3.accumulate(&d_ln3)?;
        gx.add_assign(&g_res)?;

        // cross-attention sub-layer: queries from the residual stream,
        // keys/values from the pooled encoder view
        let mut g_branch = gx.clone();
        dropout_backward(&mut g_branch, &lc.drop2);
        let (g_q, g_kv, d_cross) =
            multi_head_attention_backward(&layer.cross_attn, &lc.cross_mha, &g_branch)?;
        glayer.cross_attn.accumulate(&d_cross)?;
        pooled_grads[li].add_assign(&g_kv)?;
        let (g_res, d_ln2) = layer.ln2.backward(&lc.ln2, &g_q)?;
        glayer.ln2.accumulate(&d_ln2)?;
        gx.add_assign(&g_res)?;

        // self-attention sub-layer
        let mut g_branch = gx.clone();
        dropout_backward(&mut g_branch, &lc.drop1);
        let (g_q, g_kv, d_self) =
            multi_head_attention_backward(&layer.self_attn, &lc.self_mha, &g_branch)?;
        glayer.self_attn.accumulate(&d_self)?;
        let mut g_ln1_out = g_q;
        g_ln1_out.add_assign(&g_kv)?;
        let (g_res, d_ln1) = layer.ln1.backward(&lc.ln1, &g_ln1_out)?;
        glayer.ln1.accumulate(&d_ln1)?;
        gx.add_assign(&g_res)?;
    }

    let d_emb = params.embedding.backward(&cache.input_ids, &gx)?;
    grads.embedding.accumulate(&d_emb)?;
    Ok(pooled_grads)
}

/// Per-layer key/value rows of already-consumed decoder positions,
/// appended one row per step. Rows equal what a fresh full forward would
/// compute because layer norm and the projections act row-wise.
pub struct KVCache<S> {
    k: Vec<Vec<S>>, // [layer][pos * d_model + j]
    v: Vec<Vec<S>>,
    len: usize,
}

impl<S: Scalar> KVCache<S> {
    fn new(layers: usize) -> Self {
        KVCache {
            k: vec![Vec::new(); layers],
            v: vec![Vec::new(); layers],
            len: 0,
        }
    }

    /// Number of positions cached so far.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn append(&mut self, layer: usize, k_row: &[S], v_row: &[S]) {
        self.k[layer].extend_from_slice(k_row);
        self.v[layer].extend_from_slice(v_row);
    }
}

/// Incremental decoding state: the KV cache, per-layer encoder-side
/// projected keys/values (computed once per sequence), consumed tokens,
/// and the hybrid-mask time anchor.
pub struct DecodeState<S> {
    cache: KVCache<S>,
    cross_k: Vec<Tensor<S>>,
    cross_v: Vec<Tensor<S>>,
    pooled_len: Vec<usize>,
    ids: Vec<u32>,
    last_bin: Option<u32>,
}

impl<S: Scalar> DecodeState<S> {
    pub fn consumed(&self) -> &[u32] {
        &self.ids
    }

    pub fn kv_len(&self) -> usize {
        self.cache.len()
    }
}

/// Prepare decoding against an encoded sequence: pool per layer and
/// project cross-attention keys/values once.
pub fn begin_decode<S: Scalar>(
    z: &Tensor<S>,
    cfg: &ModelConfig,
    params: &Params<S>,
) -> Result<DecodeState<S>> {
    let pooled = pooled_views(z, cfg)?;
    let mut cross_k = Vec::with_capacity(cfg.dec_layers);
    let mut cross_v = Vec::with_capacity(cfg.dec_layers);
    for (layer, view) in params.dec_layers.iter().zip(pooled.iter()) {
        cross_k.push(layer.cross_attn.wk.forward(view)?);
        cross_v.push(layer.cross_attn.wv.forward(view)?);
    }
    Ok(DecodeState {
        cache: KVCache::new(cfg.dec_layers),
        pooled_len: pooled.iter().map(|p| p.rows()).collect(),
        cross_k,
        cross_v,
        ids: Vec::new(),
        last_bin: None,
    })
}

/// Single-query multi-head attention over flat row-major keys/values
/// restricted to rows `[start, end)`. Bumps the MAC counter like the
/// batched kernels do.
fn attend_one<S: Scalar>(
    q: &[S],
    keys: &[S],
    values: &[S],
    start: usize,
    end: usize,
    d_model: usize,
    n_heads: usize,
    out: &mut [S],
) -> Result<()> {
    if start >= end {
        return contract_err("decode attention window is empty");
    }
    let d_head = d_model / n_heads;
    let scale = S::one() / S::from_f64((d_head as f64).sqrt());
    let width = end - start;
    let mut probs = vec![S::zero(); width];
    for h in 0..n_heads {
        let q_h = &q[h * d_head..(h + 1) * d_head];
        let mut max = S::neg_infinity();
        for (off, p) in probs.iter_mut().enumerate() {
            let row = &keys[(start + off) * d_model + h * d_head..][..d_head];
            let mut dot = S::zero();
            for (&a, &b) in q_h.iter().zip(row.iter()) {
                dot += a * b;
            }
            *p = dot * scale;
            if *p > max {
                max = *p;
            }
        }
        if !max.is_finite() {
            return contract_err("non-finite logit in decode attention");
        }
        let mut sum = S::zero();
        for p in probs.iter_mut() {
            *p = (*p - max).exp();
            sum += *p;
        }
        let inv = S::one() / sum;
        let out_h = &mut out[h * d_head..(h + 1) * d_head];
        out_h.iter_mut().for_each(|o| *o = S::zero());
        for (off, p) in probs.iter().enumerate() {
            let vrow = &values[(start + off) * d_model + h * d_head..][..d_head];
            let w = *p * inv;
            for (o, &vv) in out_h.iter_mut().zip(vrow.iter()) {
                *o += w * vv;
            }
        }
    }
    add_macs((width * 2 * d_model) as u64);
    Ok(())
}

/// Feed one token, get logits over the vocabulary for the next position.
/// Refuses once `max_output_len` positions have been consumed.
pub fn decode_step<S: Scalar>(
    state: &mut DecodeState<S>,
    cfg: &ModelConfig,
    params: &Params<S>,
    token: u32,
) -> Result<Vec<S>> {
    let pos = state.ids.len();
    if pos >= cfg.max_output_len {
        return input_err(format!(
            "decode length {} reached max_output_len {}",
            pos, cfg.max_output_len
        ));
    }
    let tok = Token::from_id(token)?;
    if let Token::Time(b) = tok {
        state.last_bin = Some(b);
    }
    let d = cfg.d_model;

    let mut x = params.embedding.forward(&[token])?;
    let pe = sinusoidal_pe::<S>(1, d, pos);
    x.add_assign(&pe)?;

    for (li, layer) in params.dec_layers.iter().enumerate() {
        // self-attention over the cache plus this position
        let (h, _) = layer.ln1.forward(&x)?;
        let q = layer.self_attn.wq.forward(&h)?;
        let k_new = layer.self_attn.wk.forward(&h)?;
        let v_new = layer.self_attn.wv.forward(&h)?;
        state.cache.append(li, k_new.data(), v_new.data());

        let start = match cfg.dec_self {
            DecSelfAttn::Full => 0,
            DecSelfAttn::CausalLocal => pos.saturating_sub(cfg.window),
        };
        let mut attn = vec![S::zero(); d];
        attend_one(
            q.data(),
            &state.cache.k[li],
            &state.cache.v[li],
            start,
            pos + 1,
            d,
            cfg.heads,
            &mut attn,
        )?;
        let attn_t = Tensor::from_vec(&[1, d], attn)?;
        let out = layer.self_attn.wo.forward(&attn_t)?;
        x.add_assign(&out)?;

        // cross-attention over the precomputed pooled projections
        let (h2, _) = layer.ln2.forward(&x)?;
        let qc = layer.cross_attn.wq.forward(&h2)?;
        let t_l = state.pooled_len[li];
        let (start, end) = match cfg.cross {
            CrossAttn::Full => (0, t_l),
            CrossAttn::HybridGlobalLocal => {
                let global = matches!(
                    tok.kind(),
                    TokenKind::Time | TokenKind::Bos | TokenKind::Eos | TokenKind::Pad
                ) || state.last_bin.is_none();
                if global {
                    (0, t_l)
                } else {
                    let kernel = cfg.pooling.kernels()[li];
                    let t = (state.last_bin.unwrap() as usize / kernel).min(t_l - 1);
                    (t.saturating_sub(cfg.window), (t + cfg.window + 1).min(t_l))
                }
            }
        };
        let mut attn = vec![S::zero(); d];
        attend_one(
            qc.data(),
            state.cross_k[li].data(),
            state.cross_v[li].data(),
            start,
            end,
            d,
            cfg.heads,
            &mut attn,
        )?;
        let attn_t = Tensor::from_vec(&[1, d], attn)?;
        let out = layer.cross_attn.wo.forward(&attn_t)?;
        x.add_assign(&out)?;

        // feed-forward
        let (h3, _) = layer.ln3.forward(&x)?;
        let (ffn_out, _) = layer.ffn.forward(&h3)?;
        x.add_assign(&ffn_out)?;
        if x.check_finite("").is_err() {
            return contract_err(format!("non-finite activation in decode step, layer {li}"));
        }
    }

    let (y, _) = params.dec_final_ln.forward(&x)?;
    let logits = params.output_proj.forward(&y)?;
    state.cache.len = pos + 1;
    state.ids.push(token);
    Ok(logits.data().to_vec())
}

/// Argmax with ties broken toward the lowest id.
pub fn argmax_id<S: Scalar>(logits: &[S]) -> u32 {
    let mut best = 0usize;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best as u32
}

/// Greedy decoding from BOS until EOS or the output-length budget.
/// Returns the generated body (no BOS, no EOS).
pub fn greedy_decode_from_latent<S: Scalar>(
    z: &Tensor<S>,
    cfg: &ModelConfig,
    params: &Params<S>,
) -> Result<Vec<u32>> {
    let mut state = begin_decode(z, cfg, params)?;
    let mut out = Vec::new();
    let mut token = BOS_ID;
    while state.ids.len() < cfg.max_output_len {
        let logits = decode_step(&mut state, cfg, params, token)?;
        let next = argmax_id(&logits);
        if next == EOS_ID {
            break;
        }
        out.push(next);
        token = next;
    }
    Ok(out)
}
