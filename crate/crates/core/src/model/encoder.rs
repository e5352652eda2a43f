//! Pre-LN transformer encoder over log-mel frames.
//!
//! Input projection plus sinusoidal positions, then per block
//! `x += Dropout(MHA(LN(x)))` and `x += Dropout(FFN(LN(x)))`, then a
//! final layer norm.

use super::config::{EncSelfAttn, ModelConfig};
use super::params::Params;
use crate::attention::{
    build_band_mask, build_full_mask, multi_head_attention_backward, multi_head_attention_fwd,
    AttentionMask, MhaCache,
};
use crate::error::{contract_err, input_err, Result};
use crate::nn::{
    add_positional, dropout_backward, dropout_forward, DropoutMask, FeedForwardCache,
    LayerNormCache,
};
use crate::tensor::{Scalar, Tensor};
use rand_chacha::ChaCha8Rng;

pub struct EncLayerCache<S> {
    ln1: LayerNormCache<S>,
    mha: MhaCache<S>,
    drop1: DropoutMask<S>,
    ln2: LayerNormCache<S>,
    ffn: FeedForwardCache<S>,
    drop2: DropoutMask<S>,
}

pub struct EncoderCache<S> {
    features: Tensor<S>,
    layers: Vec<EncLayerCache<S>>,
    final_ln: LayerNormCache<S>,
}

impl<S: Scalar> EncoderCache<S> {
    pub fn n_frames(&self) -> usize {
        self.features.rows()
    }
}

/// Encoder self-attention mask for a sequence of `t` frames.
pub fn encoder_mask(cfg: &ModelConfig, t: usize) -> Result<AttentionMask> {
    match cfg.enc_self {
        EncSelfAttn::Full => build_full_mask(t, t),
        EncSelfAttn::Local => build_band_mask(t, cfg.window),
    }
}

/// Forward pass keeping everything `encode_backward` needs.
pub fn encode_fwd<S: Scalar>(
    features: &Tensor<S>,
    cfg: &ModelConfig,
    params: &Params<S>,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(Tensor<S>, EncoderCache<S>)> {
    if features.shape().len() != 2 || features.cols() != cfg.input_dim {
        return input_err(format!(
            "encoder expects [T, {}] features, got {:?}",
            cfg.input_dim,
            features.shape()
        ));
    }
    let t = features.rows();
    if t == 0 {
        return input_err("encoder needs at least one frame");
    }
    let mask = encoder_mask(cfg, t)?;

    let mut x = params.input_proj.forward(features)?;
    add_positional(&mut x, 0);

    let mut layers = Vec::with_capacity(cfg.enc_layers);
    for (li, layer) in params.enc_layers.iter().enumerate() {
        let (ln1_out, ln1) = layer.ln1.forward(&x)?;
        let (mut attn_out, mha) =
            multi_head_attention_fwd(&ln1_out, &ln1_out, &layer.attn, &mask, cfg.heads, cfg.route)?;
        let drop1 = dropout_forward(&mut attn_out, cfg.dropout, rng.as_deref_mut())?;
        x.add_assign(&attn_out)?;
        if x.check_finite("").is_err() {
            return contract_err(format!("non-finite activation in encoder layer {li} (attention)"));
        }

        let (ln2_out, ln2) = layer.ln2.forward(&x)?;
        let (mut ffn_out, ffn) = layer.ffn.forward(&ln2_out)?;
        let drop2 = dropout_forward(&mut ffn_out, cfg.dropout, rng.as_deref_mut())?;
        x.add_assign(&ffn_out)?;
        if x.check_finite("").is_err() {
            return contract_err(format!("non-finite activation in encoder layer {li} (ffn)"));
        }

        layers.push(EncLayerCache {
            ln1,
            mha,
            drop1,
            ln2,
            ffn,
            drop2,
        });
    }
    let (z, final_ln) = params.enc_final_ln.forward(&x)?;
    Ok((
        z,
        EncoderCache {
            features: features.clone(),
            layers,
            final_ln,
        },
    ))
}

/// Eval-mode encode: latent representations `[T, d_model]`.
pub fn encode<S: Scalar>(
    features: &Tensor<S>,
    cfg: &ModelConfig,
    params: &Params<S>,
) -> Result<Tensor<S>> {
    encode_fwd(features, cfg, params, None).map(|(z, _)| z)
}

/// Backpropagate `grad_z` through the encoder, accumulating parameter
/// gradients into `grads`.
pub fn encode_backward<S: Scalar>(
    params: &Params<S>,
    cache: &EncoderCache<S>,
    grad_z: &Tensor<S>,
    grads: &mut Params<S>,
) -> Result<()> {
    let (mut gx, d_final) = params.enc_final_ln.backward(&cache.final_ln, grad_z)?;
    grads.enc_final_ln.accumulate(&d_final)?;

    for (li, layer) in params.enc_layers.iter().enumerate().rev() {
        let lc = &cache.layers[li];
        let glayer = &mut grads.enc_layers[li];

        // ffn sub-layer: x = x_mid + Dropout(FFN(LN2(x_mid)))
        let mut g_branch = gx.clone();
        dropout_backward(&mut g_branch, &lc.drop2);
        let (g_ln2_out, d_ffn) = layer.ffn.backward(&lc.ffn, &g_branch)?;
        glayer.ffn.accumulate(&d_ffn)?;
        let (g_mid_branch, d_ln2) = layer.ln2.backward(&lc.ln2, &g_ln2_out)?;
        glayer.ln2.accumulate(&d_ln2)?;
        gx.add_assign(&g_mid_branch)?;

        // attention sub-layer: x_mid = x_in + Dropout(MHA(LN1(x_in)))
        let mut g_branch = gx.clone();
        dropout_backward(&mut g_branch, &lc.drop1);
        let (g_q, g_kv, d_mha) = multi_head_attention_backward(&layer.attn, &lc.mha, &g_branch)?;
        glayer.attn.accumulate(&d_mha)?;
        let mut g_ln1_out = g_q;
        g_ln1_out.add_assign(&g_kv)?;
        let (g_in_branch, d_ln1) = layer.ln1.backward(&lc.ln1, &g_ln1_out)?;
        glayer.ln1.accumulate(&d_ln1)?;
        gx.add_assign(&g_in_branch)?;
    }

    // positions are fixed; only the input projection has parameters
    let (_, d_proj) = params.input_proj.backward(&cache.features, &gx)?;
    grads.input_proj.accumulate(&d_proj)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;
    use rand::{Rng, SeedableRng};

    fn toy_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::toy();
        cfg.enc_layers = 2;
        cfg.d_model = 16;
        cfg.heads = 2;
        cfg.d_ff = 24;
        cfg.input_dim = 8;
        cfg
    }

    fn rand_features(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Tensor<f64> {
        Tensor::from_vec(&[t, d], (0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn single_frame_local_equals_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut cfg = toy_cfg();
        let params = Params::<f64>::init(&cfg, &mut rng.clone());
        let features = rand_features(&mut rng, 1, cfg.input_dim);

        cfg.enc_self = EncSelfAttn::Full;
        let full = encode(&features, &cfg, &params).unwrap();
        cfg.enc_self = EncSelfAttn::Local;
        let local = encode(&features, &cfg, &params).unwrap();
        assert_eq!(full, local);
    }

    #[test]
    fn wide_window_local_equals_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut cfg = toy_cfg();
        let t = 9;
        cfg.window = 2 * t; // covers the whole sequence
        let params = Params::<f64>::init(&cfg, &mut rng.clone());
        let features = rand_features(&mut rng, t, cfg.input_dim);

        cfg.enc_self = EncSelfAttn::Full;
        let full = encode(&features, &cfg, &params).unwrap();
        cfg.enc_self = EncSelfAttn::Local;
        let local = encode(&features, &cfg, &params).unwrap();
        for (a, b) in full.data().iter().zip(local.data().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_features_zero_biases_depend_only_on_positions() {
        // with zero inputs and zero biases the projection contributes
        // nothing, so two different zero inputs give identical outputs
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = toy_cfg();
        let params = Params::<f64>::init(&cfg, &mut rng);
        let zeros = Tensor::zeros(&[5, cfg.input_dim]);
        let z1 = encode(&zeros, &cfg, &params).unwrap();
        let z2 = encode(&zeros, &cfg, &params).unwrap();
        assert_eq!(z1, z2);
        // positions differ row to row, so rows must differ
        assert_ne!(z1.row(0), z1.row(1));
    }

    #[test]
    fn encoder_gradcheck_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut cfg = toy_cfg();
        cfg.enc_layers = 1;
        cfg.enc_self = EncSelfAttn::Local;
        cfg.window = 3;
        let params = Params::<f64>::init(&cfg, &mut rng.clone());
        let features = rand_features(&mut rng, 5, cfg.input_dim);
        let gz: Tensor<f64> = rand_features(&mut rng, 5, cfg.d_model);

        let loss = |p: &Params<f64>| -> f64 {
            encode(&features, &cfg, p)
                .unwrap()
                .data()
                .iter()
                .zip(gz.data().iter())
                .map(|(a, b)| a * b)
                .sum()
        };

        let (_, cache) = encode_fwd(&features, &cfg, &params, None).unwrap();
        let mut grads = Params::<f64>::zeros_like_grads(&cfg);
        encode_backward(&params, &cache, &gz, &mut grads).unwrap();

        let mut probe = ChaCha8Rng::seed_from_u64(99);
        let names: Vec<String> = params.named_tensors().iter().map(|(n, _)| n.clone()).collect();
        let eps = 1e-6;
        for _ in 0..30 {
            let ni = probe.gen_range(0..names.len());
            let name = &names[ni];
            if name.starts_with("dec") || name.starts_with("emb") || name.starts_with("output") {
                continue;
            }
            let len = params
                .named_tensors()
                .iter()
                .find(|(n, _)| n == name)
                .unwrap()
                .1
                .len();
            let idx = probe.gen_range(0..len);
            let analytic = grads
                .named_tensors()
                .iter()
                .find(|(n, _)| n == name)
                .unwrap()
                .1[idx];
            let mut pp = params.clone();
            let mut pm = params.clone();
            for (n, t) in pp.named_tensors_mut() {
                if &n == name {
                    t[idx] += eps;
                }
            }
            for (n, t) in pm.named_tensors_mut() {
                if &n == name {
                    t[idx] -= eps;
                }
            }
            let fd = (loss(&pp) - loss(&pm)) / (2.0 * eps);
            // floor the denominator: FD roundoff (~1e-10 absolute) makes
            // pure relative error meaningless for near-zero gradients
            let denom = analytic.abs().max(fd.abs()).max(1e-3);
            assert!(
                (analytic - fd).abs() / denom < 1e-5,
                "{name}[{idx}]: analytic {analytic} vs fd {fd}"
            );
        }
    }
}
