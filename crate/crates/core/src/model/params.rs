//! Model parameters: one struct mirrored by gradients and optimizer
//! moments. Tensors are reachable by stable dotted names for the
//! checkpoint format and the optimizer.

use super::config::ModelConfig;
use crate::attention::MhaParams;
use crate::error::{contract_err, Result};
use crate::nn::{Embedding, FeedForward, LayerNorm, Linear};
use crate::tensor::{Scalar, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams<S> {
    pub ln1: LayerNorm<S>,
    pub attn: MhaParams<S>,
    pub ln2: LayerNorm<S>,
    pub ffn: FeedForward<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayerParams<S> {
    pub ln1: LayerNorm<S>,
    pub self_attn: MhaParams<S>,
    pub ln2: LayerNorm<S>,
    pub cross_attn: MhaParams<S>,
    pub ln3: LayerNorm<S>,
    pub ffn: FeedForward<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params<S> {
    pub input_proj: Linear<S>,
    pub enc_layers: Vec<EncoderLayerParams<S>>,
    pub enc_final_ln: LayerNorm<S>,
    pub embedding: Embedding<S>,
    pub dec_layers: Vec<DecoderLayerParams<S>>,
    pub dec_final_ln: LayerNorm<S>,
    pub output_proj: Linear<S>,
}

/// Expands to the full walk over all parameter tensors, pushing
/// `(name, borrow)` pairs into `$out`; `r` borrows shared, `m` mutable.
macro_rules! visit_params {
    ($out:ident, $p:expr, $ref_or_mut:tt) => {{
        let p = $p;
        $out.push(("input_proj.w".into(), visit_params!(@f p.input_proj.w, $ref_or_mut)));
        $out.push(("input_proj.b".into(), visit_params!(@f p.input_proj.b, $ref_or_mut)));
        for (i, l) in visit_params!(@iter p.enc_layers, $ref_or_mut).enumerate() {
            for (suffix, t) in visit_params!(@enc l, $ref_or_mut) {
                $out.push((format!("enc.{i}.{suffix}"), t));
            }
        }
        $out.push(("enc_final_ln.gain".into(), visit_params!(@f p.enc_final_ln.gain, $ref_or_mut)));
        $out.push(("enc_final_ln.bias".into(), visit_params!(@f p.enc_final_ln.bias, $ref_or_mut)));
        $out.push(("embedding.table".into(), visit_params!(@f p.embedding.table, $ref_or_mut)));
        for (i, l) in visit_params!(@iter p.dec_layers, $ref_or_mut).enumerate() {
            for (suffix, t) in visit_params!(@dec l, $ref_or_mut) {
                $out.push((format!("dec.{i}.{suffix}"), t));
            }
        }
        $out.push(("dec_final_ln.gain".into(), visit_params!(@f p.dec_final_ln.gain, $ref_or_mut)));
        $out.push(("dec_final_ln.bias".into(), visit_params!(@f p.dec_final_ln.bias, $ref_or_mut)));
        $out.push(("output_proj.w".into(), visit_params!(@f p.output_proj.w, $ref_or_mut)));
        $out.push(("output_proj.b".into(), visit_params!(@f p.output_proj.b, $ref_or_mut)));
    }};
    (@f $e:expr, r) => { &$e };
    (@f $e:expr, m) => { &mut $e };
    (@iter $e:expr, r) => { $e.iter() };
    (@iter $e:expr, m) => { $e.iter_mut() };
    (@enc $l:expr, r) => {{
        let l = $l;
        vec![
            ("ln1.gain", &l.ln1.gain), ("ln1.bias", &l.ln1.bias),
            ("attn.wq.w", &l.attn.wq.w), ("attn.wq.b", &l.attn.wq.b),
            ("attn.wk.w", &l.attn.wk.w), ("attn.wk.b", &l.attn.wk.b),
            ("attn.wv.w", &l.attn.wv.w), ("attn.wv.b", &l.attn.wv.b),
            ("attn.wo.w", &l.attn.wo.w), ("attn.wo.b", &l.attn.wo.b),
            ("ln2.gain", &l.ln2.gain), ("ln2.bias", &l.ln2.bias),
            ("ffn.w1.w", &l.ffn.w1.w), ("ffn.w1.b", &l.ffn.w1.b),
            ("ffn.w2.w", &l.ffn.w2.w), ("ffn.w2.b", &l.ffn.w2.b),
        ]
    }};
    (@enc $l:expr, m) => {{
        let l = $l;
        vec![
            ("ln1.gain", &mut l.ln1.gain), ("ln1.bias", &mut l.ln1.bias),
            ("attn.wq.w", &mut l.attn.wq.w), ("attn.wq.b", &mut l.attn.wq.b),
            ("attn.wk.w", &mut l.attn.wk.w), ("attn.wk.b", &mut l.attn.wk.b),
            ("attn.wv.w", &mut l.attn.wv.w), ("attn.wv.b", &mut l.attn.wv.b),
            ("attn.wo.w", &mut l.attn.wo.w), ("attn.wo.b", &mut l.attn.wo.b),
            ("ln2.gain", &mut l.ln2.gain), ("ln2.bias", &mut l.ln2.bias),
            ("ffn.w1.w", &mut l.ffn.w1.w), ("ffn.w1.b", &mut l.ffn.w1.b),
            ("ffn.w2.w", &mut l.ffn.w2.w), ("ffn.w2.b", &mut l.ffn.w2.b),
        ]
    }};
    (@dec $l:expr, r) => {{
        let l = $l;
        vec![
            ("ln1.gain", &l.ln1.gain), ("ln1.bias", &l.ln1.bias),
            ("self_attn.wq.w", &l.self_attn.wq.w), ("self_attn.wq.b", &l.self_attn.wq.b),
            ("self_attn.wk.w", &l.self_attn.wk.w), ("self_attn.wk.b", &l.self_attn.wk.b),
            ("self_attn.wv.w", &l.self_attn.wv.w), ("self_attn.wv.b", &l.self_attn.wv.b),
            ("self_attn.wo.w", &l.self_attn.wo.w), ("self_attn.wo.b", &l.self_attn.wo.b),
            ("ln2.gain", &l.ln2.gain), ("ln2.bias", &l.ln2.bias),
            ("cross_attn.wq.w", &l.cross_attn.wq.w), ("cross_attn.wq.b", &l.cross_attn.wq.b),
            ("cross_attn.wk.w", &l.cross_attn.wk.w), ("cross_attn.wk.b", &l.cross_attn.wk.b),
            ("cross_attn.wv.w", &l.cross_attn.wv.w), ("cross_attn.wv.b", &l.cross_attn.wv.b),
            ("cross_attn.wo.w", &l.cross_attn.wo.w), ("cross_attn.wo.b", &l.cross_attn.wo.b),
            ("ln3.gain", &l.ln3.gain), ("ln3.bias", &l.ln3.bias),
            ("ffn.w1.w", &l.ffn.w1.w), ("ffn.w1.b", &l.ffn.w1.b),
            ("ffn.w2.w", &l.ffn.w2.w), ("ffn.w2.b", &l.ffn.w2.b),
        ]
    }};
    (@dec $l:expr, m) => {{
        let l = $l;
        vec![
            ("ln1.gain", &mut l.ln1.gain), ("ln1.bias", &mut l.ln1.bias),
            ("self_attn.wq.w", &mut l.self_attn.wq.w), ("self_attn.wq.b", &mut l.self_attn.wq.b),
            ("self_attn.wk.w", &mut l.self_attn.wk.w), ("self_attn.wk.b", &mut l.self_attn.wk.b),
            ("self_attn.wv.w", &mut l.self_attn.wv.w), ("self_attn.wv.b", &mut l.self_attn.wv.b),
            ("self_attn.wo.w", &mut l.self_attn.wo.w), ("self_attn.wo.b", &mut l.self_attn.wo.b),
            ("ln2.gain", &mut l.ln2.gain), ("ln2.bias", &mut l.ln2.bias),
            ("cross_attn.wq.w", &mut l.cross_attn.wq.w), ("cross_attn.wq.b", &mut l.cross_attn.wq.b),
            ("cross_attn.wk.w", &mut l.cross_attn.wk.w), ("cross_attn.wk.b", &mut l.cross_attn.wk.b),
            ("cross_attn.wv.w", &mut l.cross_attn.wv.w), ("cross_attn.wv.b", &mut l.cross_attn.wv.b),
            ("cross_attn.wo.w", &mut l.cross_attn.wo.w), ("cross_attn.wo.b", &mut l.cross_attn.wo.b),
            ("ln3.gain", &mut l.ln3.gain), ("ln3.bias", &mut l.ln3.bias),
            ("ffn.w1.w", &mut l.ffn.w1.w), ("ffn.w1.b", &mut l.ffn.w1.b),
            ("ffn.w2.w", &mut l.ffn.w2.w), ("ffn.w2.b", &mut l.ffn.w2.b),
        ]
    }};
}

impl<S: Scalar> Params<S> {
    /// All-zero parameters with shapes from the config (gradients,
    /// optimizer moments, and checkpoint loading start here).
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let enc_layer = || EncoderLayerParams {
            ln1: LayerNorm::new(d),
            attn: MhaParams::zeros(d),
            ln2: LayerNorm::new(d),
            ffn: FeedForward::zeros(d, cfg.d_ff),
        };
        let dec_layer = || DecoderLayerParams {
            ln1: LayerNorm::new(d),
            self_attn: MhaParams::zeros(d),
            ln2: LayerNorm::new(d),
            cross_attn: MhaParams::zeros(d),
            ln3: LayerNorm::new(d),
            ffn: FeedForward::zeros(d, cfg.d_ff),
        };
        Params {
            input_proj: Linear::zeros(cfg.input_dim, d),
            enc_layers: (0..cfg.enc_layers).map(|_| enc_layer()).collect(),
            enc_final_ln: LayerNorm::new(d),
            embedding: Embedding::zeros(cfg.vocab_size, d),
            dec_layers: (0..cfg.dec_layers).map(|_| dec_layer()).collect(),
            dec_final_ln: LayerNorm::new(d),
            output_proj: Linear::zeros(d, cfg.vocab_size),
        }
    }

    /// Gradient/moment accumulator: zero everywhere, including LN gains.
    pub fn zeros_like_grads(cfg: &ModelConfig) -> Self {
        let mut p = Self::zeros(cfg);
        for (_, t) in p.named_tensors_mut() {
            t.fill(S::zero());
        }
        p
    }

    /// Seeded initialization: truncated normal (std 0.02, cut at two
    /// standard deviations) for projection weights and the embedding,
    /// zeros for biases, ones for LN gains.
    pub fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(cfg);
        for (name, t) in p.named_tensors_mut() {
            let is_weight = name.ends_with(".w") || name == "embedding.table";
            if is_weight {
                for v in t.data_mut() {
                    *v = S::from_f64(trunc_normal(rng, 0.02));
                }
            }
        }
        p
    }

    /// Tensors in a stable order under stable dotted names.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out: Vec<(String, &Tensor<S>)> = Vec::new();
        visit_params!(out, self, r);
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out: Vec<(String, &mut Tensor<S>)> = Vec::new();
        visit_params!(out, self, m);
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Elementwise `self += other`; structures must match.
    pub fn add_assign(&mut self, other: &Params<S>) -> Result<()> {
        let theirs = other.named_tensors();
        for ((name, t), (other_name, o)) in self.named_tensors_mut().into_iter().zip(theirs) {
            if name != other_name {
                return contract_err("parameter structure mismatch in add_assign");
            }
            t.add_assign(o)?;
        }
        Ok(())
    }

    pub fn scale_all(&mut self, k: S) {
        for (_, t) in self.named_tensors_mut() {
            t.scale(k);
        }
    }

    pub fn cast<T: Scalar>(&self) -> Params<T> {
        let cast_lin = |l: &Linear<S>| Linear {
            w: l.w.cast::<T>(),
            b: l.b.cast::<T>(),
        };
        let cast_ln = |l: &LayerNorm<S>| LayerNorm {
            gain: l.gain.cast::<T>(),
            bias: l.bias.cast::<T>(),
        };
        let cast_mha = |m: &MhaParams<S>| MhaParams {
            wq: cast_lin(&m.wq),
            wk: cast_lin(&m.wk),
            wv: cast_lin(&m.wv),
            wo: cast_lin(&m.wo),
        };
        Params {
            input_proj: cast_lin(&self.input_proj),
            enc_layers: self
                .enc_layers
                .iter()
                .map(|l| EncoderLayerParams {
                    ln1: cast_ln(&l.ln1),
                    attn: cast_mha(&l.attn),
                    ln2: cast_ln(&l.ln2),
                    ffn: FeedForward {
                        w1: cast_lin(&l.ffn.w1),
                        w2: cast_lin(&l.ffn.w2),
                    },
                })
                .collect(),
            enc_final_ln: cast_ln(&self.enc_final_ln),
            embedding: Embedding {
                table: self.embedding.table.cast::<T>(),
            },
            dec_layers: self
                .dec_layers
                .iter()
                .map(|l| DecoderLayerParams {
                    ln1: cast_ln(&l.ln1),
                    self_attn: cast_mha(&l.self_attn),
                    ln2: cast_ln(&l.ln2),
                    cross_attn: cast_mha(&l.cross_attn),
                    ln3: cast_ln(&l.ln3),
                    ffn: FeedForward {
                        w1: cast_lin(&l.ffn.w1),
                        w2: cast_lin(&l.ffn.w2),
                    },
                })
                .collect(),
            dec_final_ln: cast_ln(&self.dec_final_ln),
            output_proj: cast_lin(&self.output_proj),
        }
    }
}

/// Normal(0, std) truncated at two standard deviations.
fn trunc_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    loop {
        // Box-Muller
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn names_are_unique_and_orders_match() {
        let cfg = ModelConfig::toy();
        let mut p = Params::<f32>::zeros(&cfg);
        let names: Vec<String> = p.named_tensors().into_iter().map(|(n, _)| n).collect();
        let mut_names: Vec<String> = p.named_tensors_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, mut_names);
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len(), "duplicate parameter names");
    }

    /// Parameter count for the full-size configuration, pinned. The
    /// independent count below rebuilds the total from layer shapes.
    #[test]
    fn paper_scale_parameter_count_pinned() {
        let cfg = ModelConfig::default();
        let p = Params::<f32>::zeros(&cfg);

        let d = 512usize;
        let ff = 1024usize;
        let vocab = 987usize;
        let lin = |i: usize, o: usize| i * o + o;
        let ln = 2 * d;
        let mha = 4 * lin(d, d);
        let enc_layer = mha + 2 * ln + lin(d, ff) + lin(ff, d);
        let dec_layer = 2 * mha + 3 * ln + lin(d, ff) + lin(ff, d);
        let expect = lin(d, d)            // input projection
            + 6 * enc_layer + ln          // encoder + final LN
            + vocab * d                   // embedding
            + 6 * dec_layer + ln          // decoder + final LN
            + lin(d, vocab);              // output projection
        assert_eq!(p.num_params(), expect);
        assert_eq!(p.num_params(), 32_819_675);
    }

    #[test]
    fn init_statistics_and_determinism() {
        let cfg = ModelConfig::toy();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let p = Params::<f32>::init(&cfg, &mut rng);
        let mut rng2 = ChaCha8Rng::seed_from_u64(42);
        let p2 = Params::<f32>::init(&cfg, &mut rng2);
        assert_eq!(p, p2);

        // weights are truncated at 2 sigma = 0.04, biases zero, gains one
        for (name, t) in p.named_tensors() {
            if name.ends_with(".w") || name == "embedding.table" {
                assert!(t.data().iter().all(|&v| v.abs() <= 0.04 + 1e-9), "{name}");
                assert!(t.data().iter().any(|&v| v != 0.0), "{name} all zero");
            } else if name.ends_with(".gain") {
                assert!(t.data().iter().all(|&v| v == 1.0), "{name}");
            } else {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn grads_accumulator_is_all_zero() {
        let cfg = ModelConfig::toy();
        let g = Params::<f64>::zeros_like_grads(&cfg);
        for (_, t) in g.named_tensors() {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }
}
