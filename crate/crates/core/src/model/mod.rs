//! T5-style Pre-LN encoder-decoder with configurable attention sparsity,
//! hierarchical encoder-output pooling, KV-cached greedy decoding, and a
//! teacher-forced training forward/backward.

pub mod checkpoint;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod params;
pub mod pooling;

pub use config::{CrossAttn, DecSelfAttn, EncSelfAttn, ModelConfig, PoolingSchedule, Variant};
pub use decoder::{
    begin_decode, decode_step, decoder_backward, decoder_fwd, greedy_decode_from_latent, DecodeState,
    KVCache,
};
pub use encoder::{encode, encode_backward, encode_fwd};
pub use params::Params;
pub use pooling::{pool_backward, pool_encoder_output};

use crate::error::{contract_err, input_err, Result};
use crate::nn::softmax_cross_entropy;
use crate::tensor::{Scalar, Tensor};
use crate::tokenizer::{BOS_ID, PAD_ID};
use rand_chacha::ChaCha8Rng;

/// One training example: input frames and the target token ids. Targets
/// end with EOS and may be PAD-extended to the batch maximum length.
pub type Example<S> = (Tensor<S>, Vec<u32>);

/// Transcribe features with greedy decoding: encode, then autoregressive
/// argmax from BOS. Returns the generated body token ids.
pub fn greedy_decode<S: Scalar>(
    features: &Tensor<S>,
    cfg: &ModelConfig,
    params: &Params<S>,
) -> Result<Vec<u32>> {
    let z = encode(features, cfg, params)?;
    greedy_decode_from_latent(&z, cfg, params)
}

/// Teacher-forced loss and gradients over a batch.
///
/// Cross-entropy is averaged over non-PAD target positions across the
/// whole batch; PAD positions contribute exactly zero loss and gradient.
/// Items are processed in order with a fixed reduction order, so results
/// are deterministic for a fixed seed.
pub fn forward_backward<S: Scalar>(
    batch: &[Example<S>],
    cfg: &ModelConfig,
    params: &Params<S>,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(S, Params<S>)> {
    if batch.is_empty() {
        return input_err("empty batch");
    }
    struct ItemState<S: Scalar> {
        enc_cache: encoder::EncoderCache<S>,
        dec_cache: decoder::DecoderCache<S>,
        pooled: Vec<Tensor<S>>,
        dlogits: Tensor<S>,
    }

    let mut items = Vec::with_capacity(batch.len());
    let mut total_loss = S::zero();
    let mut total_count = 0usize;

    for (features, targets) in batch {
        if targets.is_empty() {
            return input_err("target sequence is empty (must at least end with EOS)");
        }
        // decoder input: BOS followed by the targets shifted right
        let mut input_ids = Vec::with_capacity(targets.len());
        input_ids.push(BOS_ID);
        input_ids.extend_from_slice(&targets[..targets.len() - 1]);

        let (z, enc_cache) = encoder::encode_fwd(features, cfg, params, rng.as_deref_mut())?;
        let pooled = decoder::pooled_views(&z, cfg)?;
        let (logits, dec_cache) =
            decoder::decoder_fwd(&input_ids, &pooled, cfg, params, rng.as_deref_mut())?;

        let counted: Vec<bool> = targets.iter().map(|&t| t != PAD_ID).collect();
        let (loss, count, dlogits) = softmax_cross_entropy(&logits, targets, &counted)?;
        total_loss += loss;
        total_count += count;
        items.push(ItemState {
            enc_cache,
            dec_cache,
            pooled,
            dlogits,
        });
    }
    if total_count == 0 {
        return input_err("batch has no non-PAD target positions");
    }
    let scale = S::one() / S::from_f64(total_count as f64);
    let mean_loss = total_loss * scale;
    if !mean_loss.is_finite() {
        return contract_err("non-finite training loss");
    }

    let mut grads = Params::<S>::zeros_like_grads(cfg);
    for item in items.iter_mut() {
        item.dlogits.scale(scale);
        let pooled_grads = decoder::decoder_backward(
            params,
            &item.dec_cache,
            &item.pooled,
            &item.dlogits,
            &mut grads,
        )?;
        // fold per-layer pooled gradients back onto the shared Z
        let t_orig = item.enc_cache.n_frames();
        let mut grad_z = Tensor::zeros(&[t_orig, cfg.d_model]);
        for (gp, &kernel) in pooled_grads.iter().zip(cfg.pooling.kernels()) {
            let gz = pooling::pool_backward(gp, t_orig, kernel)?;
            grad_z.add_assign(&gz)?;
        }
        encoder::encode_backward(params, &item.enc_cache, &grad_z, &mut grads)?;
    }
    Ok((mean_loss, grads))
}
