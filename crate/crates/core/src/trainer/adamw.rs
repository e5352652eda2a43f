//! AdamW with decoupled weight decay: the decay is applied directly to
//! the weights, not mixed into the gradient moments.

use crate::error::{contract_err, Result};
use crate::model::{ModelConfig, Params};
use crate::tensor::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<S> {
    pub m: Params<S>,
    pub v: Params<S>,
    pub step: u64,
}

impl<S: Scalar> AdamWState<S> {
    pub fn new(cfg: &ModelConfig) -> Self {
        AdamWState {
            m: Params::zeros_like_grads(cfg),
            v: Params::zeros_like_grads(cfg),
            step: 0,
        }
    }
}

/// One AdamW update on a flat tensor. `t` is the post-increment step
/// counter (1 on the first update) used for bias correction.
pub fn adamw_update_tensor<S: Scalar>(
    p: &mut [S],
    g: &[S],
    m: &mut [S],
    v: &mut [S],
    t: u64,
    cfg: &AdamWConfig,
) {
    let lr = S::from_f64(cfg.lr);
    let b1 = S::from_f64(cfg.beta1);
    let b2 = S::from_f64(cfg.beta2);
    let eps = S::from_f64(cfg.eps);
    let one = S::one();
    let bc1 = S::from_f64(1.0 - cfg.beta1.powi(t as i32));
    let bc2 = S::from_f64(1.0 - cfg.beta2.powi(t as i32));
    let decay = S::from_f64(cfg.lr * cfg.weight_decay);

    for i in 0..p.len() {
        // decoupled decay straight on the weight
        p[i] -= decay * p[i];
        m[i] = b1 * m[i] + (one - b1) * g[i];
        v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Full-model AdamW step. Fails with a contract violation naming the
/// offending parameter if its gradient is non-finite.
pub fn adamw_step<S: Scalar>(
    params: &mut Params<S>,
    grads: &Params<S>,
    state: &mut AdamWState<S>,
    cfg: &AdamWConfig,
) -> Result<()> {
    for (name, g) in grads.named_tensors() {
        if !g.data().iter().all(|x| x.is_finite()) {
            return contract_err(format!("non-finite gradient for parameter '{name}'"));
        }
    }
    state.step += 1;
    let t = state.step;
    let gs = grads.named_tensors();
    let ms = state.m.named_tensors_mut();
    let vs = state.v.named_tensors_mut();
    for (((pname, p), (gname, g)), ((mname, m), (vname, v))) in params
        .named_tensors_mut()
        .into_iter()
        .zip(gs)
        .zip(ms.into_iter().zip(vs))
    {
        if pname != gname || pname != mname || pname != vname {
            return contract_err("optimizer state structure mismatch");
        }
        adamw_update_tensor(p.data_mut(), g.data(), m.data_mut(), v.data_mut(), t, cfg);
    }
    Ok(())
}

/// Global-norm gradient clipping; a limit of zero disables it.
pub fn clip_grad_norm<S: Scalar>(grads: &mut Params<S>, max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for (_, t) in grads.named_tensors() {
        for &x in t.data() {
            sq += x.as_f64() * x.as_f64();
        }
    }
    let norm = sq.sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let k = S::from_f64(max_norm / norm);
        grads.scale_all(k);
    }
    norm
}
